# strategy_space.py - Gridded strategy functions f_i: Θ_i → A_i
"""
Strategies are piecewise-multilinear interpolants of node values on a
tensor grid over the type box, clamped to the action box after
interpolation. Profiles are immutable; iteration builds new ones.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from errors import ShapeError
from expectation import QuadratureRule
from game_model import BoxSpace, DensityModel, GameSpec
from utils import DEFAULT_GRID_NODES

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class StrategyGrid:
    """Node values of one player's strategy; `values` has shape (*node_counts, z)."""
    type_space: BoxSpace
    action_space: BoxSpace
    values: np.ndarray
    _interp: Any = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        d, z = self.type_space.dim, self.action_space.dim
        if values.ndim == d:
            values = values[..., None]
        if values.ndim != d + 1 or values.shape[-1] != z:
            raise ShapeError(f"Strategy values of shape {values.shape} do not fit d={d}, z={z}")
        if any(c < 2 for c in values.shape[:-1]):
            raise ShapeError(f"Every type axis needs at least 2 nodes, got {values.shape[:-1]}")
        # feasibility is exact: round-off outside the box is clipped, anything larger is an error
        if np.any(values < self.action_space.lower - 1e-9) or np.any(values > self.action_space.upper + 1e-9):
            raise ShapeError("Strategy node values leave the action box")
        values = np.clip(values, self.action_space.lower, self.action_space.upper)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_interp", RegularGridInterpolator(self.axes, values, method="linear"))

    @property
    def node_counts(self) -> Tuple[int, ...]:
        return tuple(self.values.shape[:-1])

    @property
    def axes(self) -> List[np.ndarray]:
        return [np.linspace(self.type_space.lower[k], self.type_space.upper[k], c)
                for k, c in enumerate(self.values.shape[:-1])]

    @property
    def nodes(self) -> np.ndarray:
        """Grid nodes flattened in C order, shape (N, d)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    @property
    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1, self.action_space.dim)

    def spacing(self) -> np.ndarray:
        return self.type_space.widths / (np.asarray(self.node_counts) - 1)

    def evaluate(self, theta: np.ndarray) -> np.ndarray:
        """Vectorized evaluation at theta (..., d) -> (..., z); points are snapped into the type box."""
        theta = np.asarray(theta, dtype=float)
        flat = self.type_space.clip(theta.reshape(-1, self.type_space.dim))
        out = self._interp(flat)
        return self.action_space.clip(out).reshape(theta.shape[:-1] + (self.action_space.dim,))

    def with_values(self, values: np.ndarray) -> "StrategyGrid":
        return StrategyGrid(self.type_space, self.action_space, np.asarray(values).reshape(self.values.shape))

    def same_grid(self, other: "StrategyGrid") -> bool:
        return (self.node_counts == other.node_counts
                and np.allclose(self.type_space.lower, other.type_space.lower)
                and np.allclose(self.type_space.upper, other.type_space.upper)
                and self.action_space.dim == other.action_space.dim)

    @classmethod
    def constant(cls, type_space: BoxSpace, action_space: BoxSpace, value: Any,
                 node_counts: Union[int, Sequence[int]] = DEFAULT_GRID_NODES) -> "StrategyGrid":
        counts = _counts(node_counts, type_space.dim)
        value = np.broadcast_to(np.asarray(value, dtype=float), (action_space.dim,))
        return cls(type_space, action_space, np.broadcast_to(value, counts + (action_space.dim,)).copy())

    @classmethod
    def from_function(cls, type_space: BoxSpace, action_space: BoxSpace, fn: Callable[[np.ndarray], np.ndarray],
                      node_counts: Union[int, Sequence[int]] = DEFAULT_GRID_NODES) -> "StrategyGrid":
        counts = _counts(node_counts, type_space.dim)
        template = cls.constant(type_space, action_space, action_space.lower, counts)
        raw = np.asarray(fn(template.nodes), dtype=float).reshape(counts + (action_space.dim,))
        return cls(type_space, action_space, action_space.clip(raw))


def _counts(node_counts: Union[int, Sequence[int]], dim: int) -> Tuple[int, ...]:
    if np.ndim(node_counts) == 0:
        return (int(node_counts),) * dim
    counts = tuple(int(c) for c in node_counts)
    if len(counts) != dim:
        raise ShapeError(f"Got {len(counts)} node counts for a {dim}-dimensional type box")
    return counts


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    grids: Tuple[StrategyGrid, ...]

    def __post_init__(self):
        object.__setattr__(self, "grids", tuple(self.grids))

    @property
    def n(self) -> int:
        return len(self.grids)

    def __getitem__(self, i: int) -> StrategyGrid:
        return self.grids[i]

    def replace(self, i: int, grid: StrategyGrid) -> "StrategyProfile":
        grids = list(self.grids)
        grids[i] = grid
        return StrategyProfile(tuple(grids))

    def reversed_actions(self, j: int) -> "StrategyProfile":
        """Player j's strategy mirrored inside its action box; an involution."""
        grid = self.grids[j]
        box = grid.action_space
        return self.replace(j, grid.with_values(box.lower + box.upper - grid.values))

    def max_node_change(self, other: "StrategyProfile") -> float:
        """Node-wise sup distance; both profiles must share grids."""
        _check_match(self, other)
        return float(max(np.max(np.abs(a.values - b.values)) for a, b in zip(self.grids, other.grids)))

    @classmethod
    def constant(cls, game: GameSpec, values: Sequence[Any],
                 node_counts: Union[int, Sequence[int]] = DEFAULT_GRID_NODES) -> "StrategyProfile":
        return cls(tuple(
            StrategyGrid.constant(game.type_space(i), game.action_space(i), values[i], node_counts)
            for i in range(game.n)
        ))

    @classmethod
    def from_function(cls, game: GameSpec, fn: Callable[[int, np.ndarray], np.ndarray],
                      node_counts: Union[int, Sequence[int]] = DEFAULT_GRID_NODES) -> "StrategyProfile":
        return cls(tuple(
            StrategyGrid.from_function(game.type_space(i), game.action_space(i), lambda th, i=i: fn(i, th), node_counts)
            for i in range(game.n)
        ))

    @classmethod
    def midpoint(cls, game: GameSpec, node_counts: Union[int, Sequence[int]] = DEFAULT_GRID_NODES) -> "StrategyProfile":
        return cls.constant(game, [game.action_space(i).midpoint() for i in range(game.n)], node_counts)


def _check_match(f: StrategyProfile, g: StrategyProfile) -> None:
    if f.n != g.n:
        raise ShapeError(f"Profiles have {f.n} and {g.n} players")
    for i, (a, b) in enumerate(zip(f.grids, g.grids)):
        if not a.same_grid(b):
            raise ShapeError(f"Strategy grids of player {i} differ: {a.node_counts} vs {b.node_counts}")


# =====================================
# OPERATIONS
# =====================================

def eval_strategy(strategy: StrategyGrid, theta_i: Any) -> np.ndarray:
    """f_i(θ_i) with a domain check on θ_i."""
    theta_i = strategy.type_space.check(theta_i, label="theta_i")
    return strategy.evaluate(theta_i.reshape(1, -1))[0]


@dataclass
class NormReport:
    p: float
    per_player: List[float]

    @property
    def max(self) -> float:
        return float(max(self.per_player)) if self.per_player else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"p": "inf" if np.isinf(self.p) else self.p, "per_player": self.per_player, "max": self.max}


def parse_p(p: Any) -> float:
    if isinstance(p, str):
        p = p.strip().lower()
        if p in ("inf", "infinity", "∞"):
            return np.inf
        p = float(p)
    p = float(p)
    if p not in (1.0, 2.0) and not np.isinf(p):
        raise ValueError(f"p must be 1, 2 or inf, got {p}")
    return p


def own_type_rule(density: DensityModel, i: int, rule: Optional[QuadratureRule] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes on Θ_i and probability weights of the own-type marginal η_i."""
    rule = rule or QuadratureRule()
    nodes, w = rule.on_box(density.type_boxes[i])
    weights = w * np.asarray(density.marginal(i, nodes), dtype=float)
    return nodes, weights / weights.sum()


def lp_of_samples(norms_at_nodes: np.ndarray, weights: np.ndarray, p: float) -> float:
    """(Σ w ‖Δ‖^p)^{1/p}, or the max for p = ∞."""
    if np.isinf(p):
        return float(np.max(norms_at_nodes)) if norms_at_nodes.size else 0.0
    return float(np.sum(weights * norms_at_nodes ** p) ** (1.0 / p))


def lp_norm_diff(f: StrategyProfile, g: StrategyProfile, p: Any, density: DensityModel,
                 rule: Optional[QuadratureRule] = None) -> NormReport:
    """
    ‖f_i − g_i‖_{L^p(η_i)} per player and their max. For p = ∞ the sup is
    taken over the union of quadrature and grid nodes.
    """
    p = parse_p(p)
    _check_match(f, g)
    per_player = []
    for i, (fi, gi) in enumerate(zip(f.grids, g.grids)):
        nodes, weights = own_type_rule(density, i, rule)
        diff_q = np.linalg.norm(fi.evaluate(nodes) - gi.evaluate(nodes), axis=-1)
        if np.isinf(p):
            diff_g = np.linalg.norm(fi.flat_values - gi.flat_values, axis=-1)
            per_player.append(float(max(diff_q.max(), diff_g.max())))
        else:
            per_player.append(lp_of_samples(diff_q, weights, p))
    return NormReport(p=p, per_player=per_player)


def top_bottom(game: GameSpec, node_counts: Union[int, Sequence[int]] = DEFAULT_GRID_NODES) -> Tuple[StrategyProfile, StrategyProfile]:
    """Constant profiles at ∨A_i (upper corner) and ∧A_i (lower corner)."""
    top = StrategyProfile.constant(game, [game.action_space(i).top() for i in range(game.n)], node_counts)
    bottom = StrategyProfile.constant(game, [game.action_space(i).bottom() for i in range(game.n)], node_counts)
    return top, bottom


@dataclass
class MonotoneCheck:
    monotone: bool
    witness: Optional[Tuple[Tuple[int, ...], Tuple[int, ...]]] = None

    def __bool__(self) -> bool:
        return self.monotone


def is_monotone(strategy: StrategyGrid, slack: float = MONOTONE_SLACK, decreasing: bool = False) -> MonotoneCheck:
    """
    Node values non-decreasing (or non-increasing) along every grid axis,
    coordinatewise in the action. On failure the first violating adjacent
    node pair is returned.
    """
    values = -strategy.values if decreasing else strategy.values
    for axis in range(values.ndim - 1):
        step = np.diff(values, axis=axis)
        bad = np.argwhere(np.any(step < -slack, axis=-1))
        if bad.size:
            first = tuple(int(k) for k in bad[0])
            nxt = list(first)
            nxt[axis] += 1
            return MonotoneCheck(False, (first, tuple(nxt)))
    return MonotoneCheck(True)


# =====================================
# DUMP / LOAD
# =====================================

def dump_strategy(strategy: StrategyGrid, path: Path, player: int) -> Tuple[Path, Path]:
    """CSV with one row per node (theta_*, a_*) plus a JSON sidecar with the grid shape."""
    path = Path(path)
    nodes = strategy.nodes
    frame = pd.DataFrame(
        np.hstack([nodes, strategy.flat_values]),
        columns=[f"theta_{k}" for k in range(nodes.shape[1])] + [f"a_{k}" for k in range(strategy.action_space.dim)],
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    sidecar = path.with_suffix(".json")
    sidecar.write_bytes(orjson.dumps({
        "player": player,
        "node_counts": list(strategy.node_counts),
        "type_space": strategy.type_space.to_dict(),
        "action_space": strategy.action_space.to_dict(),
    }, option=orjson.OPT_INDENT_2))
    logger.debug(f"Strategy of player {player} dumped to {path}")
    return path, sidecar


def load_strategy(path: Path) -> Tuple[int, StrategyGrid]:
    """Inverse of dump_strategy."""
    path = Path(path)
    meta = orjson.loads(path.with_suffix(".json").read_bytes())
    frame = pd.read_csv(path)
    type_space = BoxSpace(meta["type_space"]["lower"], meta["type_space"]["upper"])
    action_space = BoxSpace(meta["action_space"]["lower"], meta["action_space"]["upper"])
    cols = [c for c in frame.columns if c.startswith("a_")]
    values = frame[cols].to_numpy().reshape(tuple(meta["node_counts"]) + (len(cols),))
    return int(meta["player"]), StrategyGrid(type_space, action_space, values)
