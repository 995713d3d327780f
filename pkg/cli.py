# cli.py - Command-line entry point
"""
Solve, certify and stress-test continuous Bayesian Nash equilibria from the
command line.

    python cli.py solve --game games/cournot2.json --grid 101 --p inf --tol 1e-8
    python cli.py monotone --game games/cournot3.toml --direction bottom --override
    python cli.py moduli --game games/cournot3.toml --trials 500
    python cli.py distance --game games/cournot2.json --rho2 0.6
    python cli.py stability --game games/cournot2.json --rho2 0.31
    python cli.py sweep --game games/cournot2.json --rho2 0.6 --eps-list 0.4 0.2 0.1 0.05
    python cli.py verify-example cournot2 --rho 0.3

Every run writes an append-only JSON report (plus CSV strategy dumps and
tables) to the output directory; CBNE_OUTPUT_DIR overrides --output-dir.
Exit status: 0 when every check passed, 1 on a failed check or a solver
error, 2 on an unexpected failure.
"""

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, conint, root_validator, validator

from best_response import estimate_moduli, lipschitz_response_check
from cournot import COURNOT2_DEFAULTS, COURNOT3_DEFAULTS, closed_form_equilibrium, cournot2, cournot3
from divergences import (
    DEFAULT_CELLS,
    DistanceMetric,
    PerturbationKind,
    PerturbationSpec,
    conditional_distance_profile,
    joint_measure,
    kl,
    tv,
    w1,
)
from equilibrium import (
    DEFAULT_EPS,
    DEFAULT_MAX_ITER,
    Direction,
    banach_iteration_bound,
    fixed_point_residual,
    monotone_in_type,
    solve_contraction,
    solve_monotone,
)
from errors import CBNEError, ConfigError, TransportSizeError
from expectation import QuadratureKind, QuadratureRule
from game_config import load_game, validate_model
from game_model import DensityModel, FGMDensity, GameSpec
from report_schema import report_model
from stability import SolverSettings, check_admissibility, run_sensitivity_sweep, run_stability
from strategy_space import StrategyProfile, dump_strategy, parse_p
from utils import (
    DEFAULT_GRID_NODES,
    DEFAULT_QUADRATURE_NODES,
    DEFAULT_SEED,
    config_hash,
    get_system_info,
    report_path,
    resolve_output_dir,
    setup_logging,
    to_jsonable,
    write_csv_table,
    write_json_report,
)

logger = logging.getLogger(__name__)

EXAMPLES = ("cournot2", "cournot3")
DEFAULT_EPS_LIST = [0.4, 0.2, 0.1, 0.05]
CLOSED_FORM_TOL = 1e-3
MODULI_TOL = 1e-12
INEQUALITY_SLACK = 1e-12

# Fields that change where or how loudly a run reports, not what it computes
_NON_SEMANTIC = {"output_dir", "log_level"}


# =====================================
# CONFIGURATION
# =====================================

class RunConfig(BaseModel):
    """Validated command-line configuration for one subcommand run."""
    subcommand: Literal["solve", "monotone", "moduli", "distance", "stability", "sweep", "verify-example"]
    game: Optional[str] = None
    example: Optional[Literal["cournot2", "cournot3"]] = None
    grid: conint(ge=2) = DEFAULT_GRID_NODES
    quad: conint(ge=1) = DEFAULT_QUADRATURE_NODES
    quad_kind: QuadratureKind = QuadratureKind.GAUSS_LEGENDRE
    p: str = "inf"
    tol: float = 1e-8
    eps: float = DEFAULT_EPS
    max_iter: conint(ge=1) = DEFAULT_MAX_ITER
    cells: conint(ge=2) = DEFAULT_CELLS
    seed: int = DEFAULT_SEED
    trials: conint(ge=0) = 0
    direction: Direction = Direction.FROM_TOP
    override: bool = False
    no_reversal: bool = False
    rho2: Optional[float] = None
    alt_game: Optional[str] = None
    epsilon: Optional[float] = None
    eps_list: List[float] = Field(default_factory=lambda: list(DEFAULT_EPS_LIST))
    alpha: Optional[float] = None
    beta: Optional[float] = None
    c: Optional[float] = None
    rho: Optional[float] = None
    output_dir: Optional[str] = None
    log_level: str = "INFO"

    @validator("tol", "eps")
    def positive_tolerance(cls, v):
        if not v > 0:
            raise ValueError("tolerances must be positive")
        return v

    @validator("p")
    def known_norm(cls, v):
        parse_p(v)
        return v

    @validator("epsilon")
    def mixture_weight(cls, v):
        if v is not None and not 0.0 <= v <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")
        return v

    @root_validator(skip_on_failure=True)
    def required_inputs(cls, values):
        sub = values["subcommand"]
        if sub == "verify-example":
            if values.get("example") is None:
                raise ValueError(f"verify-example needs one of {list(EXAMPLES)}")
        elif not values.get("game"):
            raise ValueError(f"{sub} needs --game")
        if sub in ("distance", "stability", "sweep") and values.get("rho2") is None and not values.get("alt_game"):
            raise ValueError(f"{sub} needs --rho2 or --alt-game for the perturbing density")
        return values

    @property
    def norm(self) -> float:
        return parse_p(self.p)

    def rule(self) -> QuadratureRule:
        return QuadratureRule(self.quad_kind, self.quad)

    def settings(self) -> SolverSettings:
        return SolverSettings(rule=self.rule(), node_counts=self.grid, eps_target=self.eps,
                              max_iter=self.max_iter, cells=self.cells, seed=self.seed)

    def hash_payload(self) -> Dict[str, Any]:
        return {k: v for k, v in self.dict().items() if k not in _NON_SEMANTIC}


@dataclass
class CommandOutcome:
    """What a subcommand computed: report body, named checks and artifacts to write."""
    report: Dict[str, Any]
    checks: Dict[str, bool] = field(default_factory=dict)
    game: Optional[GameSpec] = None
    profile: Optional[StrategyProfile] = None
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


# =====================================
# HELPERS
# =====================================

def _alternative_density(config: RunConfig, game: GameSpec) -> DensityModel:
    """μ (or η̂ for mixtures): FGM(--rho2) on the game's type boxes, or the density of --alt-game."""
    if config.alt_game:
        return load_game(config.alt_game).density
    return FGMDensity(game.density.type_boxes, config.rho2)


def _perturbation(config: RunConfig, game: GameSpec) -> PerturbationSpec:
    alternative = _alternative_density(config, game)
    if config.epsilon is None:
        return PerturbationSpec(game.density, alternative, PerturbationKind.DIRECT)
    return PerturbationSpec(game.density, alternative, PerturbationKind.MIXTURE, config.epsilon)


def _fmt(value: float) -> str:
    return f"{value:.6g}"


# =====================================
# SUBCOMMANDS
# =====================================

def cmd_solve(config: RunConfig) -> CommandOutcome:
    game = load_game(config.game)
    moduli = estimate_moduli(game, seed=config.seed)
    result = solve_contraction(game, config.rule(), config.norm, eps_target=config.eps, max_iter=config.max_iter,
                               moduli=moduli, node_counts=config.grid, br_tol=min(config.tol, config.eps * 1e-2))
    checks = {"certified": result.certified} if moduli.contraction_ok else {}
    summary = [
        f"α = {_fmt(moduli.alpha)} ({'contraction' if moduli.contraction_ok else 'no contraction'})",
        f"iterations = {result.iterations}, residual = {_fmt(result.residual)}",
        f"certificate = {_fmt(result.certificate) if result.certified else 'none'}",
    ]
    return CommandOutcome(report={"moduli": moduli.to_dict(), "equilibrium": result.to_dict()},
                          checks=checks, game=game, profile=result.profile, summary=summary)


def cmd_monotone(config: RunConfig) -> CommandOutcome:
    game = load_game(config.game)
    result = solve_monotone(game, config.rule(), config.direction, tol=config.tol, max_iter=config.max_iter,
                            override=config.override, node_counts=config.grid, seed=config.seed,
                            allow_reversal=not config.no_reversal)
    monotone = monotone_in_type(result)
    summary = [
        f"direction = {config.direction.value}, iterations = {result.iterations}, "
        f"reversed players = {result.reversed_players or 'none'}",
        f"last node change = {_fmt(result.residual)}, type direction = {result.type_direction}",
        f"monotone in own type: {monotone}",
    ]
    report = {"equilibrium": result.to_dict(), "monotone_in_type": monotone, "override": config.override}
    return CommandOutcome(report=report, game=game, profile=result.profile, summary=summary)


def cmd_moduli(config: RunConfig) -> CommandOutcome:
    game = load_game(config.game)
    moduli = estimate_moduli(game, seed=config.seed)
    report: Dict[str, Any] = {"moduli": moduli.to_dict()}
    checks: Dict[str, bool] = {}
    summary = [
        f"σ = {[_fmt(s) for s in moduli.sigma]}",
        f"α = {_fmt(moduli.alpha)}, contraction_ok = {moduli.contraction_ok}",
    ]
    if config.trials:
        lipschitz = lipschitz_response_check(game, moduli, trials=config.trials, rule=config.rule(),
                                             p=config.norm if config.norm < np.inf else 2, seed=config.seed)
        report["lipschitz_check"] = lipschitz.to_dict()
        checks["lipschitz_response"] = lipschitz.passed
        summary.append(f"Lipschitz response check: {len(lipschitz.violations)} violations in {config.trials} trials")
    return CommandOutcome(report=report, checks=checks, game=game, summary=summary)


def cmd_distance(config: RunConfig) -> CommandOutcome:
    game = load_game(config.game)
    spec = _perturbation(config, game)
    eta = joint_measure(spec.base, config.cells)
    mu = joint_measure(spec.mu, config.cells)

    joint: Dict[str, Any] = {"tv": tv(eta, mu), "kl_forward": kl(eta, mu).to_dict(), "kl_backward": kl(mu, eta).to_dict()}
    checks = {"pinsker": joint["tv"] <= math.sqrt(joint["kl_forward"]["value"] / 2) + INEQUALITY_SLACK}
    try:
        joint["w1"] = w1(eta, mu)
        checks["diameter"] = joint["w1"] <= eta.box.diameter() * joint["tv"] + INEQUALITY_SLACK
    except TransportSizeError as exc:
        logger.warning(f"⚠️ Joint W1 skipped: {exc}")
        joint["w1"] = None

    admissibility = check_admissibility(game, spec, config.cells)
    profiles: Dict[str, Any] = {}
    tables: Dict[str, pd.DataFrame] = {}
    for i in range(game.n):
        if game.rival_type_box(i) is None:
            continue
        for metric in (DistanceMetric.W1, DistanceMetric.TV):
            profile = conditional_distance_profile(game, spec, i, metric, p=config.norm, cells=config.cells)
            profiles[f"player{i}_{metric.value}"] = profile.to_dict()
            tables[f"player{i}_{metric.value}"] = profile.to_frame()

    summary = [
        f"joint: tv = {_fmt(joint['tv'])}, kl(η‖μ) = {_fmt(joint['kl_forward']['value'])}, "
        f"w1 = {_fmt(joint['w1']) if joint['w1'] is not None else 'skipped'}",
        f"admissible = {admissibility.verdict}, C = {[_fmt(v) for v in admissibility.constants]}",
    ]
    report = {"perturbation": spec.to_dict(), "joint": joint, "conditional": profiles,
              "admissibility": admissibility.to_dict()}
    return CommandOutcome(report=report, checks=checks, game=game, tables=tables, summary=summary)


def cmd_stability(config: RunConfig) -> CommandOutcome:
    game = load_game(config.game)
    spec = _perturbation(config, game)
    report = run_stability(game, spec, config.settings())
    summary = [
        f"drift_inf = {_fmt(report.drift_inf)} vs W1 bound {_fmt(report.bound_42)}",
        f"drift_l2 = {_fmt(report.drift_l2)} vs KL bound {_fmt(report.bound_44)}",
        f"certified = {report.certified}; notes: {'; '.join(report.notes) or 'none'}",
    ]
    return CommandOutcome(report=report.to_dict(), checks=dict(report.checks), game=game,
                          profile=report.results[0].profile, summary=summary)


def cmd_sweep(config: RunConfig) -> CommandOutcome:
    game = load_game(config.game)
    alternative = _alternative_density(config, game)
    report = run_sensitivity_sweep(game, game.density, alternative, config.eps_list, config.settings())
    summary = [f"ε = {row['epsilon']:g}: drift/ε = {_fmt(row['drift_over_eps'])}" for row in report.sweep]
    summary.append(f"sensitivity bound = {_fmt(report.bound_45)}; notes: {'; '.join(report.notes) or 'none'}")
    return CommandOutcome(report=report.to_dict(), checks=dict(report.checks), game=game,
                          tables={"sweep": report.sweep_frame()}, summary=summary)


def cmd_verify_example(config: RunConfig) -> CommandOutcome:
    """
    Golden checks on the Cournot examples. cournot2 compares the solved
    profile with the closed-form equilibrium at every node; cournot3 checks
    the analytic moduli σ = 2β + c, τ = β, the contraction verdict and the
    fixed-point residual.
    """
    defaults = COURNOT2_DEFAULTS if config.example == "cournot2" else COURNOT3_DEFAULTS
    params = {k: getattr(config, k) if getattr(config, k) is not None else v for k, v in defaults.items()}
    game = cournot2(**params) if config.example == "cournot2" else cournot3(**params)
    rule = config.rule()
    moduli = estimate_moduli(game, seed=config.seed)
    result = solve_contraction(game, rule, np.inf, eps_target=config.eps, max_iter=config.max_iter,
                               moduli=moduli, node_counts=config.grid)
    checks: Dict[str, bool] = {"contraction_ok": moduli.contraction_ok}
    report: Dict[str, Any] = {"example": config.example, "parameters": params, "moduli": moduli.to_dict(),
                              "equilibrium": result.to_dict()}
    summary = [f"α = {_fmt(moduli.alpha)}, iterations = {result.iterations}"]

    if config.example == "cournot2":
        errors = [
            float(np.max(np.abs(result.node_values(i)[:, 0] - closed_form_equilibrium(
                result.profile[i].nodes[:, 0], params["alpha"], params["beta"], params["c"], params["rho"]))))
            for i in range(game.n)
        ]
        report["closed_form_max_error"] = max(errors)
        checks["closed_form"] = max(errors) <= CLOSED_FORM_TOL
        summary.append(f"max node error vs closed form = {_fmt(max(errors))}")
    else:
        sigma, tau = 2 * params["beta"] + params["c"], params["beta"]
        checks["sigma"] = all(abs(s - sigma) <= MODULI_TOL * sigma for s in moduli.sigma)
        checks["tau"] = all(abs(t - tau) <= MODULI_TOL * tau
                            for i, row in enumerate(moduli.tau) for j, t in enumerate(row) if j != i)
        expected_alpha = (game.n - 1) * tau / sigma
        checks["alpha"] = abs(moduli.alpha - expected_alpha) <= MODULI_TOL
        residual = fixed_point_residual(game, result.profile, np.inf, rule)
        report["fixed_point_residual"] = residual
        checks["fixed_point_residual"] = residual <= config.eps
        if moduli.contraction_ok and result.trace:
            threshold = config.eps * (1 - moduli.alpha) / moduli.alpha
            bound = banach_iteration_bound(result.trace[0], threshold, moduli.alpha)
            report["iteration_bound"] = bound
            checks["iteration_bound"] = result.iterations <= bound
        summary.append(f"σ = {moduli.sigma}, expected α = {_fmt(expected_alpha)}, residual = {_fmt(residual)}")
    return CommandOutcome(report=report, checks=checks, game=game, profile=result.profile, summary=summary)


COMMANDS: Dict[str, Callable[[RunConfig], CommandOutcome]] = {
    "solve": cmd_solve,
    "monotone": cmd_monotone,
    "moduli": cmd_moduli,
    "distance": cmd_distance,
    "stability": cmd_stability,
    "sweep": cmd_sweep,
    "verify-example": cmd_verify_example,
}


# =====================================
# DISPATCH
# =====================================

def write_artifacts(config: RunConfig, outcome: CommandOutcome) -> Path:
    """JSON report plus strategy CSVs and tables sharing the report's stem."""
    output_dir = resolve_output_dir(config.output_dir)
    cfg_hash = config_hash(config.hash_payload())
    path = report_path(output_dir, config.subcommand, cfg_hash)
    body = {
        "subcommand": config.subcommand,
        "config": config.hash_payload(),
        "config_hash": cfg_hash,
        "game": outcome.game.to_dict() if outcome.game is not None else None,
        "system": get_system_info(),
        "checks": outcome.checks,
        "passed": outcome.passed,
        "result": outcome.report,
    }
    report = report_model(config.subcommand).parse_obj(to_jsonable(body))
    write_json_report(report.dict(), path)
    if outcome.profile is not None:
        for i, grid in enumerate(outcome.profile.grids):
            dump_strategy(grid, path.with_name(f"{path.stem}_player{i}.csv"), i)
    for name, frame in outcome.tables.items():
        write_csv_table(frame, path.with_name(f"{path.stem}_{name}.csv"))
    return path


def cmd_dispatch(config: RunConfig) -> int:
    """Run one subcommand, write its artifacts and return the exit status."""
    handler = COMMANDS.get(config.subcommand)
    if handler is None:
        print(f"error: unknown subcommand '{config.subcommand}'", file=sys.stderr)
        return 2
    try:
        outcome = handler(config)
        path = write_artifacts(config, outcome)
    except CBNEError as exc:
        logger.error(f"❌ {config.subcommand} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        logger.error(f"❌ Unexpected failure in {config.subcommand}: {exc}", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"== {config.subcommand} ==")
    for line in outcome.summary:
        print(f"  {line}")
    for name, ok in outcome.checks.items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
    print(f"  report: {path}")
    if not outcome.passed:
        failed = [name for name, ok in outcome.checks.items() if not ok]
        logger.warning(f"⚠️ Failed checks: {failed}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--game", type=str, help="Game file (.json or .toml)")
    common.add_argument("--grid", type=int, default=DEFAULT_GRID_NODES,
                        help=f"Strategy grid nodes per type axis (default: {DEFAULT_GRID_NODES})")
    common.add_argument("--quad", type=int, default=DEFAULT_QUADRATURE_NODES,
                        help=f"Quadrature nodes per axis (default: {DEFAULT_QUADRATURE_NODES})")
    common.add_argument("--quad-kind", type=str, default=QuadratureKind.GAUSS_LEGENDRE.value,
                        choices=[k.value for k in QuadratureKind], help="Quadrature family")
    common.add_argument("--p", type=str, default="inf", choices=["1", "2", "inf"], help="Norm in own type")
    common.add_argument("--tol", type=float, default=1e-8, help="Inner solver / monotone settle tolerance")
    common.add_argument("--eps", type=float, default=DEFAULT_EPS, help="Target distance to the equilibrium")
    common.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER, help="Outer iteration cap")
    common.add_argument("--cells", type=int, default=DEFAULT_CELLS, help="Cells per type axis for divergences")
    common.add_argument("--output-dir", type=str, default=None, help="Output directory for reports")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Seed for sampled moduli and checks")
    common.add_argument("--log-level", type=str, default="INFO", help="Log level (LOG_LEVEL env overrides)")

    parser = argparse.ArgumentParser(description="Continuous Bayesian Nash equilibrium solver and verification lab")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sub.add_parser("solve", parents=[common], help="Contraction solve with certificate")

    monotone = sub.add_parser("monotone", parents=[common], help="Monotone lattice iteration")
    monotone.add_argument("--direction", type=str, default=Direction.FROM_TOP.value,
                          choices=[d.value for d in Direction], help="Start from the top or bottom profile")
    monotone.add_argument("--override", action="store_true", help="Iterate even if the order checks fail")
    monotone.add_argument("--no-reversal", action="store_true",
                          help="Do not reverse a player's action order for two-player substitutes games")

    moduli = sub.add_parser("moduli", parents=[common], help="Moduli report and contraction verdict")
    moduli.add_argument("--trials", type=int, default=0, help="Lipschitz response property trials (0 skips)")

    for name, help_text in (("distance", "Divergences between two type laws"),
                            ("stability", "Equilibrium drift against the stability bounds")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--rho2", type=float, default=None, help="FGM parameter of the perturbing law")
        p.add_argument("--alt-game", type=str, default=None, help="Game file whose density is the perturbing law")
        p.add_argument("--epsilon", type=float, default=None, help="Mix the perturbing law with weight epsilon")

    sweep = sub.add_parser("sweep", parents=[common], help="Mixture sensitivity sweep")
    sweep.add_argument("--rho2", type=float, default=None, help="FGM parameter of the mixing law")
    sweep.add_argument("--alt-game", type=str, default=None, help="Game file whose density is the mixing law")
    sweep.add_argument("--eps-list", type=float, nargs="+", default=list(DEFAULT_EPS_LIST),
                       help="Strictly decreasing mixture weights in (0, 0.5]")

    verify = sub.add_parser("verify-example", parents=[common], help="Golden Cournot checks")
    verify.add_argument("example", choices=EXAMPLES)
    for name in ("alpha", "beta", "c", "rho"):
        verify.add_argument(f"--{name}", type=float, default=None, help=f"Override {name}")
    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """argv -> validated RunConfig; schema violations raise ConfigError."""
    args = build_parser().parse_args(argv)
    data = {k: v for k, v in vars(args).items() if v is not None}
    return validate_model(RunConfig, data, "")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    setup_logging(config.log_level)
    logger.info(f"🚀 Running {config.subcommand}")
    return cmd_dispatch(config)


if __name__ == "__main__":
    sys.exit(main())
