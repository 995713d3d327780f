# equilibrium.py - Best-response iteration drivers
"""
Ψ maps a profile to the profile of pointwise optimal responses; its fixed
points are the equilibria. Two drivers iterate it:

- contraction: from any start, with the a-posteriori error certificate
  residual·α/(1−α) when α < 1;
- monotone: from the top or bottom constant profile, asserting the
  trajectory is ordered. Two-player substitutes games iterate with one
  player's action order reversed.

Order conditions are checked by sampling and reported as such.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from best_response import DEFAULT_TOL, ModuliReport, best_response_nodes, estimate_moduli
from errors import CBNEError, ConvergenceError, OrderConditionError, ShapeError
from expectation import QuadratureRule, build_context
from game_model import GameSpec, sample_profiles
from strategy_space import (
    MONOTONE_SLACK,
    StrategyProfile,
    is_monotone,
    lp_norm_diff,
    parse_p,
    top_bottom,
)
from utils import DEFAULT_GRID_NODES

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 200
ORDER_TOL = 1e-9
EVIDENCE_LABEL = "sampled evidence"


class SolveMethod(str, Enum):
    CONTRACTION = "contraction"
    MONOTONE_FROM_TOP = "monotone-from-top"
    MONOTONE_FROM_BOTTOM = "monotone-from-bottom"
    BRUTE_FORCE = "brute-force"


class Direction(str, Enum):
    FROM_TOP = "top"
    FROM_BOTTOM = "bottom"


@dataclass
class EquilibriumResult:
    profile: StrategyProfile
    iterations: int
    residual: float
    method: SolveMethod
    trace: List[float] = field(default_factory=list)
    certificate: Optional[float] = None
    alpha: Optional[float] = None
    p: float = np.inf
    type_direction: Optional[str] = None
    reversed_players: List[int] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.certificate is not None

    def node_values(self, i: int) -> np.ndarray:
        return self.profile[i].flat_values

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method.value,
            "iterations": self.iterations,
            "residual": self.residual,
            "certificate": self.certificate,
            "alpha": self.alpha,
            "p": "inf" if np.isinf(self.p) else self.p,
            "trace": self.trace,
            "node_counts": [list(g.node_counts) for g in self.profile.grids],
            "type_direction": self.type_direction,
            "reversed_players": self.reversed_players,
        }


# =====================================
# Ψ
# =====================================

def apply_psi(game: GameSpec, f: StrategyProfile, rule: Optional[QuadratureRule] = None,
              tol: float = DEFAULT_TOL) -> StrategyProfile:
    """Optimal response of every player at every grid node against the fixed input profile f."""
    if f.n != game.n:
        raise ShapeError(f"Profile has {f.n} players, game has {game.n}")
    grids = []
    for i, grid in enumerate(f.grids):
        try:
            responses = best_response_nodes(game, i, f, grid.nodes, rule, tol)
        except CBNEError as exc:
            exc.player = i
            logger.error(f"Optimal response failed for player {i}: {exc}")
            raise
        grids.append(grid.with_values(responses))
    return StrategyProfile(tuple(grids))


def fixed_point_residual(game: GameSpec, f: StrategyProfile, p: Any = np.inf,
                         rule: Optional[QuadratureRule] = None, tol: float = DEFAULT_TOL) -> float:
    """‖Ψ(f) − f‖_{∞,L^p}."""
    return lp_norm_diff(apply_psi(game, f, rule, tol), f, p, game.density, rule).max


def equilibrium_lipschitz(profile: StrategyProfile) -> List[float]:
    """Largest difference quotient of each strategy between adjacent grid nodes."""
    out = []
    for grid in profile.grids:
        worst = 0.0
        for axis, h in enumerate(grid.spacing()):
            step = np.linalg.norm(np.diff(grid.values, axis=axis), axis=-1)
            worst = max(worst, float(step.max()) / h)
        out.append(worst)
    return out


def _start_profile(game: GameSpec, start: Union[str, StrategyProfile], node_counts) -> StrategyProfile:
    if isinstance(start, StrategyProfile):
        return start
    if start == "midpoint":
        return StrategyProfile.midpoint(game, node_counts)
    top, bottom = top_bottom(game, node_counts)
    if start == "top":
        return top
    if start == "bottom":
        return bottom
    raise ValueError(f"Unknown start '{start}' (expected midpoint, top, bottom or a profile)")


# =====================================
# CONTRACTION
# =====================================

def solve_contraction(game: GameSpec, rule: Optional[QuadratureRule] = None, p: Any = np.inf,
                      eps_target: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
                      moduli: Optional[ModuliReport] = None, start: Union[str, StrategyProfile] = "midpoint",
                      node_counts: Any = DEFAULT_GRID_NODES, br_tol: Optional[float] = None) -> EquilibriumResult:
    """
    Iterate f^{k+1} = Ψ(f^k) until the residual guarantees ‖f^k − f*‖ ≤ eps_target.

    With α < 1 the residual threshold is eps_target·(1−α)/α and the result
    carries the certificate residual·α/(1−α). Without a contraction the raw
    threshold eps_target is used and no certificate is attached.
    """
    if eps_target <= 0:
        raise ValueError("eps_target must be positive")
    p = parse_p(p)
    rule = rule or QuadratureRule()
    moduli = moduli or estimate_moduli(game)
    alpha = moduli.alpha
    br_tol = br_tol or min(DEFAULT_TOL, eps_target * 1e-2)

    if moduli.contraction_ok:
        threshold = math.inf if alpha == 0 else eps_target * (1 - alpha) / alpha
    else:
        logger.warning(f"⚠️ No contraction certificate for '{game.name}' (α={alpha:.4g}); running uncertified")
        threshold = eps_target

    f = _start_profile(game, start, node_counts)
    trace: List[float] = []
    logger.info(f"Contraction solve of '{game.name}': α={alpha:.6g}, p={p}, threshold={threshold:.3e}")
    for k in range(1, max_iter + 1):
        new = apply_psi(game, f, rule, br_tol)
        residual = lp_norm_diff(new, f, p, game.density, rule).max
        trace.append(residual)
        logger.debug(f"iteration {k}: residual={residual:.3e}")
        f = new
        if residual <= threshold:
            certificate = residual * alpha / (1 - alpha) if moduli.contraction_ok else None
            logger.info(f"✅ Converged in {k} iterations (residual={residual:.3e}, certificate={certificate})")
            return EquilibriumResult(profile=f, iterations=k, residual=residual, method=SolveMethod.CONTRACTION,
                                     trace=trace, certificate=certificate, alpha=alpha, p=p)
    raise ConvergenceError(
        f"Contraction iteration for '{game.name}' did not reach {threshold:.3e} in {max_iter} iterations",
        residual=trace[-1] if trace else float("nan"),
        trace=trace,
    )


def banach_iteration_bound(first_residual: float, eps_target: float, alpha: float) -> int:
    """ceil(log(r_0/ε)/log(1/α)) + 2."""
    if alpha <= 0 or first_residual <= eps_target:
        return 2
    return int(math.ceil(math.log(first_residual / eps_target) / math.log(1 / alpha))) + 2


# =====================================
# ORDER CONDITIONS
# =====================================

@dataclass
class ConditionCheck:
    passed: bool
    trivial: bool = False
    witness: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "trivial": self.trivial, "witness": self.witness}


@dataclass
class PlayerOrderReport:
    player: int
    supermodular: ConditionCheck
    rival_differences: ConditionCheck
    type_direction: str  # increasing | decreasing | mixed | none

    def to_dict(self) -> Dict[str, Any]:
        return {
            "player": self.player,
            "supermodular": self.supermodular.to_dict(),
            "rival_increasing_differences": self.rival_differences.to_dict(),
            "type_direction": self.type_direction,
        }


@dataclass
class OrderConditionReport:
    players: List[PlayerOrderReport]
    samples: int
    evidence: str = EVIDENCE_LABEL
    sampled: str = "constant-shift rival perturbations, positive own-type increments"
    reversed_players: List[int] = field(default_factory=list)
    reversed_check: Optional["OrderConditionReport"] = None

    @property
    def direct(self) -> bool:
        return all(r.supermodular.passed and r.rival_differences.passed and r.type_direction != "mixed"
                   for r in self.players)

    @property
    def passed(self) -> bool:
        """Order structure in the game's own action order, or after reversing `reversed_players`."""
        return self.direct or (self.reversed_check is not None and self.reversed_check.direct)

    @property
    def type_direction(self) -> str:
        directions = {r.type_direction for r in self.players} - {"none"}
        if not directions:
            return "none"
        return directions.pop() if len(directions) == 1 else "mixed"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "direct_order_passed": self.direct,
            "evidence": self.evidence,
            "sampled": self.sampled,
            "samples": self.samples,
            "type_direction": self.type_direction,
            "players": [r.to_dict() for r in self.players],
            "reversed_players": self.reversed_players,
            "reversed_order": None if self.reversed_check is None else self.reversed_check.to_dict(),
        }


def _supermodularity(game: GameSpec, i: int, actions, types, rng) -> ConditionCheck:
    box = game.action_space(i)
    if box.dim == 1:
        return ConditionCheck(True, trivial=True)
    base = game.utility.grad(i, actions, types)
    for l in range(box.dim):
        h = 1e-3 * box.widths[l]
        moved = list(actions)
        shifted = actions[i].copy()
        shifted[:, l] = np.where(shifted[:, l] + h <= box.upper[l], shifted[:, l] + h, shifted[:, l] - h)
        step = shifted[:, l] - actions[i][:, l]
        moved[i] = shifted
        cross = (game.utility.grad(i, moved, types) - base) / step[:, None]
        for k in range(box.dim):
            if k == l:
                continue
            bad = np.flatnonzero(cross[:, k] < -ORDER_TOL)
            if bad.size:
                s = int(bad[0])
                return ConditionCheck(False, witness={
                    "pair": [k, l], "cross_partial": float(cross[s, k]), "a_i": actions[i][s].tolist(),
                })
    return ConditionCheck(True)


def _rival_differences(game: GameSpec, i: int, actions, types, rng) -> ConditionCheck:
    if game.n == 1:
        return ConditionCheck(True, trivial=True)
    base = game.utility.grad(i, actions, types)
    moved = list(actions)
    for j in game.rivals(i):
        box = game.action_space(j)
        # constant upward shift, as large as the box allows at every sample
        room = np.min(box.upper - actions[j], axis=-1, keepdims=True)
        moved[j] = actions[j] + np.maximum(room, 0.0) * rng.uniform(0.1, 1.0, size=room.shape)
    diff = game.utility.grad(i, moved, types) - base
    bad = np.argwhere(diff < -ORDER_TOL)
    if bad.size:
        s, k = (int(x) for x in bad[0])
        return ConditionCheck(False, witness={"component": k, "gradient_change": float(diff[s, k]),
                                              "a": [a[s].tolist() for a in actions]})
    return ConditionCheck(True)


def _type_direction(game: GameSpec, i: int, actions, types, rng) -> str:
    box = game.type_space(i)
    base = game.utility.grad(i, actions, types)
    moved = list(types)
    room = box.upper - types[i]
    moved[i] = types[i] + room * rng.uniform(0.1, 1.0, size=room.shape)
    diff = game.utility.grad(i, actions, moved) - base
    up = bool(np.all(diff >= -ORDER_TOL))
    down = bool(np.all(diff <= ORDER_TOL))
    if up and down:
        return "none"
    if up:
        return "increasing"
    return "decreasing" if down else "mixed"


def check_order_conditions(game: GameSpec, samples: int = 500, seed: int = 0,
                           allow_reversal: bool = True) -> OrderConditionReport:
    """
    Sampled evidence for the lattice structure: supermodularity in own action
    (trivial for one-dimensional actions), increasing differences in own and
    rival actions under constant rival shifts, and the sign of the own-type
    mixed partial (reported as a direction flag). Never raises.

    A two-player game of strategic substitutes (rival differences fail for
    both players) is re-checked with player 1's action order reversed; if
    that passes, the report carries `reversed_players == [1]`.
    """
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(game.n):
        actions, types = sample_profiles(game, rng, samples)
        reports.append(PlayerOrderReport(
            player=i,
            supermodular=_supermodularity(game, i, actions, types, rng),
            rival_differences=_rival_differences(game, i, actions, types, rng),
            type_direction=_type_direction(game, i, actions, types, rng),
        ))
    report = OrderConditionReport(players=reports, samples=samples)
    substitutes = game.n == 2 and not any(r.rival_differences.passed for r in reports)
    if allow_reversal and substitutes and not report.direct:
        flipped = check_order_conditions(game.reversed_actions(1), samples=samples, seed=seed, allow_reversal=False)
        if flipped.direct:
            report.reversed_players = [1]
            report.reversed_check = flipped
            logger.info(f"'{game.name}' has strategic substitutes; order holds with player 1 reversed")
    logger.info(f"Order conditions for '{game.name}' ({EVIDENCE_LABEL}): passed={report.passed}, "
                f"type direction={report.type_direction}")
    return report


# =====================================
# MONOTONE ITERATION
# =====================================

def _ordered_step(old: StrategyProfile, new: StrategyProfile, direction: Direction) -> Optional[Dict[str, Any]]:
    """First node where the trajectory leaves its order, or None."""
    for i, (a, b) in enumerate(zip(old.grids, new.grids)):
        step = b.flat_values - a.flat_values
        bad = step > MONOTONE_SLACK if direction == Direction.FROM_TOP else step < -MONOTONE_SLACK
        if np.any(bad):
            node = int(np.argwhere(bad)[0][0])
            return {"player": i, "node": a.nodes[node].tolist(), "before": a.flat_values[node].tolist(),
                    "after": b.flat_values[node].tolist()}
    return None


def solve_monotone(game: GameSpec, rule: Optional[QuadratureRule] = None,
                   direction: Union[Direction, str] = Direction.FROM_TOP, tol: float = 1e-8,
                   max_iter: int = 500, override: bool = False, node_counts: Any = DEFAULT_GRID_NODES,
                   samples: int = 500, seed: int = 0, allow_reversal: bool = True) -> EquilibriumResult:
    """
    Lattice iteration of Ψ from the top (or bottom) constant profile. The
    trajectory must be node-wise non-increasing from the top and
    non-decreasing from the bottom; a violation beyond 1e-9 means the game
    lacks the order structure.

    Two-player substitutes games iterate with player 1's action order
    reversed, so "top" starts player 0 at its upper corner and player 1 at
    its lower corner. The returned profile is in the game's own coordinates.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    direction = Direction(direction)
    rule = rule or QuadratureRule()
    order = check_order_conditions(game, samples=samples, seed=seed, allow_reversal=allow_reversal)
    if not order.passed:
        if not override:
            raise OrderConditionError(
                f"Order conditions fail for '{game.name}' ({EVIDENCE_LABEL}); pass override to iterate anyway"
            )
        logger.warning(f"⚠️ Order conditions overridden for '{game.name}'")

    reversed_players = [] if order.direct else list(order.reversed_players)
    work = game
    for j in reversed_players:
        work = work.reversed_actions(j)
    top, bottom = top_bottom(work, node_counts)
    f = top if direction == Direction.FROM_TOP else bottom
    method = SolveMethod.MONOTONE_FROM_TOP if direction == Direction.FROM_TOP else SolveMethod.MONOTONE_FROM_BOTTOM
    trace: List[float] = []
    logger.info(f"Monotone solve of '{game.name}' from the {direction.value}"
                + (f" with players {reversed_players} reversed" if reversed_players else ""))
    for k in range(1, max_iter + 1):
        new = apply_psi(work, f, rule, min(DEFAULT_TOL, tol * 1e-2))
        witness = _ordered_step(f, new, direction)
        if witness is not None:
            raise OrderConditionError(
                f"Monotone trajectory from the {direction.value} broke order at iteration {k}: {witness}"
            )
        change = new.max_node_change(f)
        trace.append(change)
        f = new
        if change <= tol:
            for j in reversed_players:
                f = f.reversed_actions(j)
            logger.info(f"✅ Monotone iteration converged in {k} iterations (change={change:.3e})")
            return EquilibriumResult(profile=f, iterations=k, residual=change, method=method, trace=trace,
                                     type_direction=order.type_direction, reversed_players=reversed_players)
    raise ConvergenceError(f"Monotone iteration did not settle within {max_iter} iterations",
                           residual=trace[-1], trace=trace)


def monotone_in_type(result: EquilibriumResult) -> List[bool]:
    """Whether each computed strategy is ordered along the reported type direction."""
    decreasing = result.type_direction == "decreasing"
    return [bool(is_monotone(g, decreasing=decreasing)) for g in result.profile.grids]


# =====================================
# BRUTE-FORCE ORACLE
# =====================================

def _scan_argmax(ctx, lower: float, upper: float, points: int, zoom_levels: int) -> np.ndarray:
    """Grid search of ϑ_i over [lower, upper] at every context node, zooming around the best point."""
    batch = ctx.batch
    lo = np.full(batch, lower)
    hi = np.full(batch, upper)
    best = lo.copy()
    for _ in range(zoom_levels):
        grid = np.linspace(lo, hi, points)               # (points, B)
        values = ctx.value(grid[..., None])              # (points, B)
        best = grid[np.argmax(values, axis=0), np.arange(batch)]
        step = (hi - lo) / (points - 1)
        lo = np.maximum(best - 2 * step, lower)
        hi = np.minimum(best + 2 * step, upper)
    return best


def brute_force_equilibrium(game: GameSpec, type_nodes: int = 5, action_points: int = 201,
                            zoom_levels: int = 3, rule: Optional[QuadratureRule] = None,
                            max_iter: int = 500) -> EquilibriumResult:
    """
    Best-response iteration on a coarse type grid where each response is an
    exhaustive scan of the action interval. One-dimensional actions only.
    """
    if any(game.action_space(i).dim != 1 for i in range(game.n)):
        raise ShapeError("The brute-force oracle scans one-dimensional action intervals only")
    rule = rule or QuadratureRule()
    f = StrategyProfile.midpoint(game, type_nodes)
    final_step = max(
        float(game.action_space(i).widths[0]) / (action_points - 1) * (4.0 / (action_points - 1)) ** (zoom_levels - 1)
        for i in range(game.n)
    )
    settle = 4 * final_step
    trace: List[float] = []
    for k in range(1, max_iter + 1):
        grids = []
        for i, grid in enumerate(f.grids):
            box = game.action_space(i)
            ctx = build_context(game, i, f, grid.nodes, rule)
            best = _scan_argmax(ctx, float(box.lower[0]), float(box.upper[0]), action_points, zoom_levels)
            grids.append(grid.with_values(best[:, None]))
        new = StrategyProfile(tuple(grids))
        change = new.max_node_change(f)
        trace.append(change)
        f = new
        if change <= settle:
            logger.info(f"Brute-force oracle settled in {k} iterations (change={change:.3e})")
            return EquilibriumResult(profile=f, iterations=k, residual=change, method=SolveMethod.BRUTE_FORCE,
                                     trace=trace)
    raise ConvergenceError(f"Brute-force oracle did not settle within {max_iter} iterations",
                           residual=trace[-1], trace=trace)


def restrict_to_nodes(result: EquilibriumResult, nodes_per_player: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Computed strategies evaluated at the given type nodes, one array per player."""
    return [result.profile[i].evaluate(np.asarray(nodes)) for i, nodes in enumerate(nodes_per_player)]
