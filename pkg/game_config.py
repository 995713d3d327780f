# game_config.py - Game file schema and loader
"""
Game files are JSON or TOML documents validated by pydantic models and
turned into GameSpec instances. Every validation problem is reported as a
ConfigError carrying the dotted key path of the offending field.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, Union

import orjson
from pydantic import BaseModel, Field, ValidationError, confloat, root_validator, validator

from errors import ConfigError
from game_model import (
    BoxSpace,
    CournotUtility,
    DensityModel,
    FGMDensity,
    GameSpec,
    GridTabulatedDensity,
    MixtureDensity,
    PlayerSpec,
    ProductUniformDensity,
    QuadraticUtility,
    UtilityModel,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)


# =====================================
# SCHEMA
# =====================================

class PlayerConfig(BaseModel):
    type_lower: List[float]
    type_upper: List[float]
    action_lower: List[float]
    action_upper: List[float]

    @root_validator(skip_on_failure=True)
    def check_boxes(cls, values):
        for prefix in ("type", "action"):
            lower, upper = values[f"{prefix}_lower"], values[f"{prefix}_upper"]
            if not lower or len(lower) != len(upper):
                raise ValueError(f"{prefix}_lower and {prefix}_upper must be non-empty and of equal length")
            if any(lo >= hi for lo, hi in zip(lower, upper)):
                raise ValueError(f"{prefix} box needs lower < upper in every coordinate")
        return values


class CournotConfig(BaseModel):
    kind: Literal["cournot"]
    alpha: Union[float, List[float]]
    beta: Union[float, List[float]]
    c: Union[float, List[float]]

    @validator("beta", "c")
    def positive(cls, v):
        values = v if isinstance(v, list) else [v]
        if any(x <= 0 for x in values):
            raise ValueError("must be positive")
        return v


class QuadraticPlayerConfig(BaseModel):
    H: List[List[float]]
    b: List[float]
    C: Dict[str, List[List[float]]] = Field(default_factory=dict)
    D: Optional[List[List[float]]] = None
    E: Dict[str, List[List[float]]] = Field(default_factory=dict)


class QuadraticConfig(BaseModel):
    kind: Literal["quadratic"]
    players: List[QuadraticPlayerConfig]


class UniformDensityConfig(BaseModel):
    kind: Literal["uniform"]


class FGMDensityConfig(BaseModel):
    kind: Literal["fgm"]
    rho: float

    @validator("rho")
    def open_interval(cls, v):
        if not -1.0 < v < 1.0:
            raise ValueError(f"FGM requires -1 < rho < 1, got {v}")
        return v


class TabulatedDensityConfig(BaseModel):
    kind: Literal["tabulated"]
    axes: List[List[float]]
    values: List[Any]


class MixtureDensityConfig(BaseModel):
    kind: Literal["mixture"]
    base: Dict[str, Any]
    alternative: Dict[str, Any]
    epsilon: confloat(ge=0.0, le=1.0)


class MetadataConfig(BaseModel):
    assumptions: List[str] = Field(default_factory=list)


class GameFileConfig(BaseModel):
    name: str = "game"
    n_players: Optional[int] = None
    players: List[PlayerConfig]
    utility: Dict[str, Any]
    density: Dict[str, Any]
    metadata: MetadataConfig = Field(default_factory=MetadataConfig)

    @validator("players")
    def at_least_one(cls, v):
        if not v:
            raise ValueError("a game needs at least one player")
        return v

    @root_validator(skip_on_failure=True)
    def consistent_count(cls, values):
        n = values.get("n_players")
        if n is not None and n != len(values["players"]):
            raise ValueError(f"n_players={n} but {len(values['players'])} players are listed")
        return values


UTILITY_SCHEMAS: Dict[str, Type[BaseModel]] = {"cournot": CournotConfig, "quadratic": QuadraticConfig}
DENSITY_SCHEMAS: Dict[str, Type[BaseModel]] = {
    "uniform": UniformDensityConfig,
    "fgm": FGMDensityConfig,
    "tabulated": TabulatedDensityConfig,
    "mixture": MixtureDensityConfig,
}


def _paths(exc: ValidationError, prefix: str) -> List[str]:
    out = []
    for err in exc.errors():
        loc = [str(x) for x in err["loc"] if x != "__root__"]
        out.append(".".join([prefix] + loc if prefix else loc) or prefix or "<root>")
    return out


def validate_model(schema: Type[BaseModel], data: Any, prefix: str) -> BaseModel:
    try:
        return schema.parse_obj(data)
    except ValidationError as exc:
        paths = _paths(exc, prefix)
        details = "; ".join(f"{p}: {e['msg']}" for p, e in zip(paths, exc.errors()))
        raise ConfigError(f"Invalid game file: {details}", paths=paths) from exc


def _dispatch(schemas: Dict[str, Type[BaseModel]], data: Dict[str, Any], prefix: str) -> BaseModel:
    kind = data.get("kind") if isinstance(data, dict) else None
    if kind not in schemas:
        raise ConfigError(f"{prefix}.kind must be one of {sorted(schemas)}, got {kind!r}", paths=[f"{prefix}.kind"])
    return validate_model(schemas[kind], data, prefix)


# =====================================
# BUILDERS
# =====================================

def _build_utility(data: Dict[str, Any], players: List[PlayerSpec]) -> UtilityModel:
    n = len(players)
    cfg = _dispatch(UTILITY_SCHEMAS, data, "utility")
    if isinstance(cfg, CournotConfig):
        return CournotUtility(cfg.alpha, cfg.beta, cfg.c, n=n)
    if len(cfg.players) != n:
        raise ConfigError(f"utility.players lists {len(cfg.players)} players, game has {n}", paths=["utility.players"])
    action_dims = [p.action_space.dim for p in players]
    type_dims = [p.type_space.dim for p in players]
    return QuadraticUtility(
        H=[p.H for p in cfg.players],
        b=[p.b for p in cfg.players],
        C=[{int(j): m for j, m in p.C.items()} for p in cfg.players],
        D=[p.D if p.D is not None else [[0.0] * type_dims[i]] * action_dims[i] for i, p in enumerate(cfg.players)],
        E=[{int(j): m for j, m in p.E.items()} for p in cfg.players],
        action_dims=action_dims,
        type_dims=type_dims,
    )


def _build_density(data: Dict[str, Any], boxes: List[BoxSpace], prefix: str = "density") -> DensityModel:
    cfg = _dispatch(DENSITY_SCHEMAS, data, prefix)
    if isinstance(cfg, UniformDensityConfig):
        return ProductUniformDensity(boxes)
    if isinstance(cfg, FGMDensityConfig):
        return FGMDensity(boxes, cfg.rho)
    if isinstance(cfg, TabulatedDensityConfig):
        return GridTabulatedDensity(boxes, cfg.axes, cfg.values)
    return MixtureDensity(
        _build_density(cfg.base, boxes, f"{prefix}.base"),
        _build_density(cfg.alternative, boxes, f"{prefix}.alternative"),
        cfg.epsilon,
    )


def parse_game_dict(data: Dict[str, Any], source: Optional[str] = None) -> GameSpec:
    """Validate a decoded game document and build the GameSpec."""
    cfg: GameFileConfig = validate_model(GameFileConfig, data, "")
    players = tuple(
        PlayerSpec(BoxSpace(p.type_lower, p.type_upper), BoxSpace(p.action_lower, p.action_upper))
        for p in cfg.players
    )
    utility = _build_utility(cfg.utility, list(players))
    density = _build_density(cfg.density, [p.type_space for p in players])
    metadata: Dict[str, Any] = {"assumptions": cfg.metadata.assumptions}
    if source:
        metadata["source"] = source
    game = GameSpec(players=players, utility=utility, density=density, name=cfg.name, metadata=metadata)
    logger.info(f"Loaded game '{game.name}': n={game.n}, utility={utility.kind.value}, density={density.kind.value}")
    return game


def load_game(path: Union[str, Path]) -> GameSpec:
    """Read a .json or .toml game file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"Cannot read game file {path}: {exc}", paths=[str(path)]) from exc
    suffix = path.suffix.lower()
    try:
        if suffix == ".json":
            data = orjson.loads(raw)
        elif suffix == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        else:
            raise ConfigError(f"Unsupported game file type '{suffix}' (expected .json or .toml)", paths=[str(path)])
    except (orjson.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"Cannot parse game file {path}: {exc}", paths=[str(path)]) from exc
    if not isinstance(data, dict):
        raise ConfigError("Game file must contain a table/object at the top level")
    return parse_game_dict(data, source=str(path))
