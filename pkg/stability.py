# stability.py - Equilibrium drift under perturbed type distributions
"""
Solve the game under η and under a perturbation μ, measure how far the
equilibrium moves, and set the drift against the W1, KL and sensitivity
bounds built from η's moduli.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from best_response import ModuliReport, estimate_moduli
from cournot import closed_form_drift, fgm_equivalent_rho, is_symmetric_cournot2, uniform_drift_bound
from divergences import (
    DEFAULT_CELLS,
    DistanceMetric,
    PerturbationKind,
    PerturbationSpec,
    conditional_distance_profile,
    joint_measure,
    kl,
    likelihood_ratio_constants,
)
from equilibrium import DEFAULT_EPS, DEFAULT_MAX_ITER, EquilibriumResult, solve_contraction
from errors import AssumptionViolation
from expectation import QuadratureRule
from game_model import DensityModel, GameSpec
from strategy_space import StrategyGrid, lp_norm_diff, own_type_rule
from utils import DEFAULT_GRID_NODES

logger = logging.getLogger(__name__)

BOUND_REL_TOL = 1e-3
RATIO_STABILITY = 0.05
LINEARITY_TOL = 1e-8
MARGINAL_TOL = 1e-9
EPS_FLOOR = 1e-11


@dataclass
class SolverSettings:
    rule: QuadratureRule = field(default_factory=QuadratureRule)
    node_counts: Any = DEFAULT_GRID_NODES
    eps_target: float = DEFAULT_EPS
    max_iter: int = DEFAULT_MAX_ITER
    cells: Any = DEFAULT_CELLS
    seed: int = 0

    def __post_init__(self):
        if self.eps_target <= 0:
            raise ValueError("eps_target must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return {"rule": self.rule.to_dict(), "node_counts": self.node_counts, "eps_target": self.eps_target,
                "max_iter": self.max_iter, "cells": self.cells, "seed": self.seed}


# =====================================
# ADMISSIBILITY
# =====================================

@dataclass
class AdmissibilityReport:
    constants: List[float]
    positive: bool
    witness: Optional[Dict[str, Any]] = None

    @property
    def verdict(self) -> bool:
        return self.positive and all(np.isfinite(self.constants))

    def to_dict(self) -> Dict[str, Any]:
        return {"C": [c if np.isfinite(c) else "inf" for c in self.constants], "positive": self.positive,
                "verdict": self.verdict, "witness": self.witness}


def check_admissibility(game: GameSpec, spec: PerturbationSpec, cells: Any = DEFAULT_CELLS) -> AdmissibilityReport:
    """Second-moment likelihood-ratio constants C_i on the grid; zero cells give a negative verdict."""
    raw = likelihood_ratio_constants(spec.base, spec.mu, cells)
    report = AdmissibilityReport(constants=raw["constants"], positive=raw["positive"], witness=raw["witness"])
    spec.admissibility = report
    if report.verdict:
        logger.info(f"Perturbation of '{game.name}' admissible: C={report.constants}")
    else:
        logger.warning(f"⚠️ Perturbation of '{game.name}' is not admissible: {report.witness}")
    return report


# =====================================
# CONCURRENT SOLVES
# =====================================

async def _solve_all(games: Sequence[GameSpec], moduli: Sequence[ModuliReport], settings: SolverSettings,
                     eps_target: float) -> List[EquilibriumResult]:
    tasks = [
        asyncio.to_thread(solve_contraction, g, settings.rule, np.inf, eps_target, settings.max_iter, m,
                          "midpoint", settings.node_counts)
        for g, m in zip(games, moduli)
    ]
    results = await asyncio.gather(*tasks, return_exceptions=True)
    for g, result in zip(games, results):
        if isinstance(result, BaseException):
            logger.error(f"Equilibrium solve under '{g.name}' failed: {result}")
            raise result
    return list(results)


def solve_many(games: Sequence[GameSpec], moduli: Sequence[ModuliReport], settings: SolverSettings,
               eps_target: Optional[float] = None) -> List[EquilibriumResult]:
    """Independent contraction solves run concurrently; results come back in input order."""
    return asyncio.run(_solve_all(games, moduli, settings, eps_target or settings.eps_target))


# =====================================
# STABILITY RUN
# =====================================

@dataclass
class StabilityReport:
    perturbation: Dict[str, Any]
    drift_inf: float
    drift_l2: float
    bound_42: float
    bound_44: float
    certified: bool
    admissibility: AdmissibilityReport
    moduli_eta: ModuliReport
    moduli_mu: ModuliReport
    eps_target: float
    bound_45: Optional[float] = None
    checks: Dict[str, bool] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    example_bound: Optional[Dict[str, float]] = None
    kl_divergences: Dict[str, float] = field(default_factory=dict)
    sweep: List[Dict[str, Any]] = field(default_factory=list)
    results: List[EquilibriumResult] = field(default_factory=list, repr=False)

    @property
    def slack_42(self) -> float:
        return self.bound_42 / self.drift_inf if self.drift_inf > 0 else float("inf")

    @property
    def slack_44(self) -> float:
        return self.bound_44 / self.drift_l2 if self.drift_l2 > 0 else float("inf")

    @property
    def sensitivity_ratio(self) -> List[float]:
        return [row["drift_over_eps"] for row in self.sweep]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def sweep_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.sweep)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "perturbation": self.perturbation,
            "drift_inf": self.drift_inf,
            "drift_l2": self.drift_l2,
            "bound_42": self.bound_42,
            "bound_44": self.bound_44,
            "bound_45": self.bound_45,
            "slack_42": self.slack_42,
            "slack_44": self.slack_44,
            "certified": self.certified,
            "admissibility": self.admissibility.to_dict(),
            "moduli_eta": self.moduli_eta.to_dict(),
            "moduli_mu": self.moduli_mu.to_dict(),
            "eps_target": self.eps_target,
            "checks": self.checks,
            "passed": self.passed,
            "notes": self.notes,
            "example_bound": self.example_bound,
            "kl": self.kl_divergences,
            "sweep": self.sweep,
            "solves": [r.to_dict() for r in self.results],
        }


def _rival_diameter(game: GameSpec, i: int) -> float:
    box = game.rival_type_box(i)
    return box.diameter() if box is not None else 0.0


def _profile_lipschitz(values: np.ndarray, own_cells: Sequence[int], widths: np.ndarray) -> float:
    """Largest slope of the per-node distance profile between adjacent cells."""
    table = values.reshape(tuple(own_cells))
    worst = 0.0
    for axis, h in enumerate(widths):
        if table.shape[axis] > 1:
            worst = max(worst, float(np.max(np.abs(np.diff(table, axis=axis)))) / h)
    return worst


def w1_bound(game: GameSpec, spec: PerturbationSpec, moduli: ModuliReport, cells: Any) -> float:
    """max_i K_i · (max over own cells of conditional W1 + profile slope · h/2)."""
    bound = 0.0
    for i in range(game.n):
        if game.rival_type_box(i) is None:
            continue
        profile = conditional_distance_profile(game, spec, i, DistanceMetric.W1, p=np.inf, cells=cells)
        own_box = game.type_space(i)
        own_cells = [len(np.unique(profile.nodes[:, k])) for k in range(own_box.dim)]
        widths = own_box.widths / np.asarray(own_cells)
        gap = _profile_lipschitz(profile.values, own_cells, widths) * float(np.linalg.norm(widths)) / 2
        bound = max(bound, moduli.stability_constant(i) * (profile.max + gap))
    return bound


def kl_bound(game: GameSpec, moduli: ModuliReport, kl_forward: float, kl_backward: float) -> float:
    """max_i K_i · Diam(Θ_{-i}) · min(√(KL(η‖μ)/2), √(KL(μ‖η)/2))."""
    scale = min(np.sqrt(kl_forward / 2), np.sqrt(kl_backward / 2))
    return float(max(moduli.stability_constant(i) * _rival_diameter(game, i) for i in range(game.n)) * scale)


def _kl_pair(first: DensityModel, second: DensityModel, cells: Any) -> Dict[str, float]:
    a = joint_measure(first, cells)
    b = joint_measure(second, cells)
    forward = kl(a, b)
    backward = kl(b, a)
    return {"forward": forward.value, "backward": backward.value,
            "floored_mass": max(forward.floored_mass, backward.floored_mass)}


def _drifts(game: GameSpec, eta_result: EquilibriumResult, mu_result: EquilibriumResult, rule: QuadratureRule):
    drift_inf = lp_norm_diff(eta_result.profile, mu_result.profile, np.inf, game.density, rule).max
    drift_l2 = lp_norm_diff(eta_result.profile, mu_result.profile, 2, game.density, rule).max
    return drift_inf, drift_l2


def _example_bound(game: GameSpec, spec: PerturbationSpec, eta_result: EquilibriumResult,
                   mu_result: EquilibriumResult, tol: float) -> Optional[Dict[str, float]]:
    """Closed-form drift bound of the two-player FGM Cournot game, when it applies."""
    rho1 = fgm_equivalent_rho(spec.base)
    rho2 = fgm_equivalent_rho(spec.mu)
    if rho1 is None or rho2 is None or not is_symmetric_cournot2(game):
        return None
    beta = float(game.utility.beta[0])
    c = float(game.utility.c[0])
    bound = uniform_drift_bound(rho1, rho2, beta, c)
    measured = max(float(np.max(np.abs(a.flat_values - b.flat_values)))
                   for a, b in zip(eta_result.profile.grids, mu_result.profile.grids))
    nodes = eta_result.profile[0].nodes[:, 0]
    pointwise = float(np.max(closed_form_drift(nodes, rho1, rho2, beta, c)))
    return {"rho_base": rho1, "rho_perturbed": rho2, "uniform_bound": bound, "pointwise_bound": pointwise,
            "measured": measured, "passed": float(measured <= bound + tol)}


def run_stability(game: GameSpec, spec: PerturbationSpec, settings: Optional[SolverSettings] = None) -> StabilityReport:
    """
    Solve under η and μ with the same grid and quadrature, then compare the
    drift in the ∞ and (∞, L²(η)) norms with the W1 and KL bounds. Uncertified
    hypotheses are reported with a "bounds not guaranteed" note.
    """
    settings = settings or SolverSettings()
    game = game.with_density(spec.base)
    mu_game = game.with_density(spec.mu, name=f"{game.name}@perturbed")
    admissibility = spec.admissibility or check_admissibility(game, spec, settings.cells)

    moduli_eta = estimate_moduli(game, seed=settings.seed)
    moduli_mu = estimate_moduli(mu_game, seed=settings.seed)
    notes: List[str] = []
    certified = moduli_eta.contraction_ok and moduli_mu.contraction_ok and admissibility.verdict
    if not certified:
        notes.append("bounds not guaranteed")
        logger.warning(f"⚠️ Stability hypotheses not certified for '{game.name}': "
                       f"α_η={moduli_eta.alpha:.4g}, α_μ={moduli_mu.alpha:.4g}, admissible={admissibility.verdict}")
    notes.append("bounds use the moduli under η; contraction under μ is certified separately")

    bound_42 = w1_bound(game, spec, moduli_eta, settings.cells)
    divergences = _kl_pair(spec.base, spec.mu, settings.cells)
    bound_44 = kl_bound(game, moduli_eta, divergences["forward"], divergences["backward"])

    scale = max(bound_42, bound_44)
    eps_target = min(settings.eps_target, max(1e-6 * scale, EPS_FLOOR)) if scale > 0 else settings.eps_target
    eta_result, mu_result = solve_many([game, mu_game], [moduli_eta, moduli_mu], settings, eps_target)
    drift_inf, drift_l2 = _drifts(game, eta_result, mu_result, settings.rule)

    tol = 4 * eps_target
    checks: Dict[str, bool] = {}
    if certified:
        checks["w1_bound"] = drift_inf <= bound_42 * (1 + BOUND_REL_TOL) + tol
        checks["kl_bound"] = drift_l2 <= bound_44 * (1 + BOUND_REL_TOL) + tol
    example = _example_bound(game, spec, eta_result, mu_result, tol)
    if example is not None:
        checks["closed_form_bound"] = bool(example["passed"])

    report = StabilityReport(
        perturbation=spec.to_dict(),
        drift_inf=drift_inf,
        drift_l2=drift_l2,
        bound_42=bound_42,
        bound_44=bound_44,
        certified=certified,
        admissibility=admissibility,
        moduli_eta=moduli_eta,
        moduli_mu=moduli_mu,
        eps_target=eps_target,
        checks=checks,
        notes=notes,
        example_bound=example,
        kl_divergences=divergences,
        results=[eta_result, mu_result],
    )
    logger.info(f"Stability of '{game.name}': drift_inf={drift_inf:.3e} (W1 bound {bound_42:.3e}), "
                f"drift_l2={drift_l2:.3e} (KL bound {bound_44:.3e}), passed={report.passed}")
    return report


# =====================================
# SENSITIVITY SWEEP
# =====================================

def check_marginals(game: GameSpec, base: DensityModel, alternative: DensityModel,
                    rule: Optional[QuadratureRule] = None, node_counts: Any = DEFAULT_GRID_NODES) -> float:
    """Max own-marginal gap between η and η̂ on quadrature and grid nodes; raises above 1e-9."""
    worst = 0.0
    for i in range(game.n):
        nodes, _ = own_type_rule(base, i, rule)
        grid = StrategyGrid.constant(game.type_space(i), game.action_space(i), game.action_space(i).lower, node_counts).nodes
        points = np.vstack([nodes, grid])
        gap = float(np.max(np.abs(base.marginal(i, points) - alternative.marginal(i, points))))
        worst = max(worst, gap)
        if gap > MARGINAL_TOL:
            raise AssumptionViolation(
                f"Own-type marginals of player {i} differ by {gap:.3e} between the base and alternative laws"
            )
    return worst


def _validate_eps_list(eps_list: Sequence[float]) -> List[float]:
    eps = [float(e) for e in eps_list]
    if not eps:
        raise ValueError("eps_list must not be empty")
    if any(not (0.0 < e <= 0.5) for e in eps):
        raise ValueError(f"Every mixture weight must lie in (0, 0.5], got {eps}")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"eps_list must be strictly decreasing, got {eps}")
    return eps


def run_sensitivity_sweep(game: GameSpec, base: DensityModel, alternative: DensityModel,
                          eps_list: Sequence[float], settings: Optional[SolverSettings] = None) -> StabilityReport:
    """
    Solve under μ_ε = (1−ε)η + εη̂ for each ε and tabulate drift/ε. The ratio
    must settle (≤ 5% change over the last two ε) below the sensitivity
    bound, and conditional W1 must scale linearly in ε.
    """
    settings = settings or SolverSettings()
    eps = _validate_eps_list(eps_list)
    check_marginals(game, base, alternative, settings.rule, settings.node_counts)
    game = game.with_density(base)

    full = PerturbationSpec(base, alternative, PerturbationKind.DIRECT)
    admissibility = check_admissibility(game, full, settings.cells)
    moduli_eta = estimate_moduli(game, seed=settings.seed)
    divergences = _kl_pair(base, alternative, settings.cells)
    bound_45 = kl_bound(game, moduli_eta, divergences["forward"], divergences["backward"])

    specs = [full.with_epsilon(e) for e in eps]
    games = [game] + [game.with_density(s.mu, name=f"{game.name}@eps={e:g}") for s, e in zip(specs, eps)]
    moduli = [moduli_eta] + [estimate_moduli(g, seed=settings.seed) for g in games[1:]]
    certified = all(m.contraction_ok for m in moduli) and admissibility.verdict
    eps_target = min(settings.eps_target, max(1e-6 * bound_45 * eps[-1], EPS_FLOOR)) if bound_45 > 0 else settings.eps_target
    results = solve_many(games, moduli, settings, eps_target)
    eta_result = results[0]

    reference = {i: conditional_distance_profile(game, full, i, DistanceMetric.W1, p=np.inf, cells=settings.cells)
                 for i in range(game.n) if game.rival_type_box(i) is not None}
    rows: List[Dict[str, Any]] = []
    linearity_gap = 0.0
    for e, spec, result in zip(eps, specs, results[1:]):
        drift_inf, drift_l2 = _drifts(game, eta_result, result, settings.rule)
        kl_eps = _kl_pair(base, spec.mu, settings.cells)
        for i, ref in reference.items():
            scaled = conditional_distance_profile(game, spec, i, DistanceMetric.W1, p=np.inf, cells=settings.cells)
            linearity_gap = max(linearity_gap, float(np.max(np.abs(scaled.values - e * ref.values))))
        rows.append({
            "epsilon": e,
            "drift_inf": drift_inf,
            "drift_l2": drift_l2,
            "drift_over_eps": drift_l2 / e,
            "bound_44": kl_bound(game, moduli_eta, kl_eps["forward"], kl_eps["backward"]),
            "bound_45": bound_45,
        })

    ratios = [r["drift_over_eps"] for r in rows]
    checks: Dict[str, bool] = {"w1_linearity": linearity_gap <= LINEARITY_TOL}
    notes: List[str] = [f"conditional W1 linearity gap {linearity_gap:.3e}"]
    if len(ratios) >= 2:
        prev, last = ratios[-2], ratios[-1]
        change = abs(last - prev) / prev if prev > 0 else 0.0
        checks["ratio_stable"] = change <= RATIO_STABILITY
        notes.append(f"relative ratio change over the last two ε: {change:.3%}")
    if certified:
        checks["sensitivity_bound"] = ratios[-1] <= bound_45 * (1 + BOUND_REL_TOL) + 4 * eps_target / eps[-1]
    else:
        notes.append("bounds not guaranteed")
    drifts = [r["drift_l2"] for r in rows]
    if any(b > a + 4 * eps_target for a, b in zip(drifts, drifts[1:])):
        notes.append("drift is not non-decreasing in ε along the sweep")

    last = rows[-1]
    report = StabilityReport(
        perturbation={"kind": PerturbationKind.MIXTURE.value, "eps_list": eps, "base": base.to_dict(),
                      "alternative": alternative.to_dict()},
        drift_inf=last["drift_inf"],
        drift_l2=last["drift_l2"],
        bound_42=w1_bound(game, specs[-1], moduli_eta, settings.cells),
        bound_44=last["bound_44"],
        certified=certified,
        admissibility=admissibility,
        moduli_eta=moduli_eta,
        moduli_mu=moduli[-1],
        eps_target=eps_target,
        bound_45=bound_45,
        checks=checks,
        notes=notes,
        kl_divergences=divergences,
        sweep=rows,
        results=results,
    )
    logger.info(f"Sensitivity sweep of '{game.name}': ratios={['%.4g' % r for r in ratios]}, "
                f"bound_45={bound_45:.4g}, passed={report.passed}")
    return report