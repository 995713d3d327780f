# best_response.py - Optimal responses and the moduli the certificates consume
"""
A*_i(f_{-i}, θ_i) = argmax_{a_i ∈ A_i} ϑ_i(a_i, f_{-i}, θ_i).

Quadratic utilities with one-dimensional actions are solved exactly
(linear first-order condition, then clamp). Everything else uses projected
gradient ascent with step 1/L_i, vectorized over the conditioning nodes.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from errors import CertificationError, ConvergenceError, PropertyViolation
from expectation import ExpectationContext, QuadratureRule, build_context
from game_model import (
    GameSpec,
    QuadraticUtility,
    monotonicity_quotients,
    sample_profiles,
)
from strategy_space import StrategyGrid, StrategyProfile, lp_norm_diff, lp_of_samples, own_type_rule, parse_p

logger = logging.getLogger(__name__)

SAFETY_FACTOR = 1.05
MIN_BUDGET = 1000
DEFAULT_TOL = 1e-10
MAX_ASCENT_ITER = 20000


class ModuliSource(str, Enum):
    ANALYTIC = "analytic"
    SAMPLED = "sampled"


@dataclass
class ModuliReport:
    """Strong concavity, blockwise Lipschitz and type moduli, with the contraction verdict."""
    sigma: List[float]
    tau: List[List[float]]
    kappa: List[float]
    gamma: List[float]
    varrho: List[float]
    nu: List[float]
    source: ModuliSource
    safety_factor: float = SAFETY_FACTOR
    samples: int = 0
    sources: Dict[str, str] = field(default_factory=dict)
    hint_specific: bool = False

    def __post_init__(self):
        if any(s <= 0 for s in self.sigma):
            raise CertificationError(f"Strong concavity moduli must be positive, got {self.sigma}")

    @property
    def n(self) -> int:
        return len(self.sigma)

    @property
    def tau_agg(self) -> List[float]:
        """τ_i = (Σ_{j≠i} τ_ij²)^{1/2}."""
        return [float(np.sqrt(sum(t ** 2 for j, t in enumerate(row) if j != i))) for i, row in enumerate(self.tau)]

    @property
    def beta(self) -> float:
        return float(max(k / s for k, s in zip(self.kappa, self.sigma)))

    @property
    def alpha(self) -> float:
        return float(max(sum(t for j, t in enumerate(row) if j != i) / self.sigma[i] for i, row in enumerate(self.tau)))

    @property
    def contraction_ok(self) -> bool:
        return self.alpha < 1.0

    def response_moduli(self, i: int) -> float:
        """κ_i / σ_i, the own-type Lipschitz modulus of A*_i."""
        return self.kappa[i] / self.sigma[i]

    def stability_constant(self, i: int) -> float:
        """(β τ_i + ϱ_i) / (σ_i (1 − α)); infinite without a contraction."""
        if not self.contraction_ok:
            return float("inf")
        return (self.beta * self.tau_agg[i] + self.varrho[i]) / (self.sigma[i] * (1.0 - self.alpha))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma": self.sigma,
            "tau": self.tau,
            "kappa": self.kappa,
            "gamma": self.gamma,
            "varrho": self.varrho,
            "nu": self.nu,
            "tau_agg": self.tau_agg,
            "beta": self.beta,
            "alpha": self.alpha,
            "contraction_ok": self.contraction_ok,
            "source": self.source.value,
            "sources": self.sources,
            "safety_factor": self.safety_factor,
            "samples": self.samples,
            "hint_specific": self.hint_specific,
        }


# =====================================
# SOLVER
# =====================================

def _own_hessian_if_quadratic(game: GameSpec, i: int) -> Optional[np.ndarray]:
    if isinstance(game.utility, QuadraticUtility):
        return game.utility.own_hessian(i)
    return None


def _sampled_curvature(ctx: ExpectationContext, rng: np.random.Generator, pairs: int = 16):
    """(L, σ) estimates of ϑ_i's gradient in a_i at the context nodes, from random pairs."""
    box = ctx.game.action_space(ctx.i)
    B = ctx.batch
    a1 = rng.uniform(box.lower, box.upper, size=(pairs, B, box.dim))
    a2 = rng.uniform(box.lower, box.upper, size=(pairs, B, box.dim))
    g1 = ctx.grad(a1)
    g2 = ctx.grad(a2)
    d = a1 - a2
    dist2 = np.maximum(np.sum(d * d, axis=-1), 1e-300)
    lip = np.sqrt(np.sum((g1 - g2) ** 2, axis=-1) / dist2)
    quotient = np.sum((g1 - g2) * d, axis=-1) / dist2
    return float(np.max(lip)) * SAFETY_FACTOR, float(-np.max(quotient))


def solve_context(ctx: ExpectationContext, tol: float = DEFAULT_TOL, max_iter: int = MAX_ASCENT_ITER,
                  start: Optional[np.ndarray] = None, seed: int = 0) -> np.ndarray:
    """Maximizers of ϑ_i at every context node, shape (B, z_i)."""
    game, i = ctx.game, ctx.i
    box = game.action_space(i)
    H = _own_hessian_if_quadratic(game, i)

    if H is not None:
        sigma = float(np.min(np.linalg.eigvalsh(-H)))
        if sigma <= 0:
            raise CertificationError(f"Utility of player {i} is not strongly concave in its own action (σ={sigma})")
        g0 = ctx.grad(np.zeros((ctx.batch, box.dim)))
        if box.dim == 1:
            # linear FOC g0 + H a = 0, projection onto an interval is exact
            return box.clip(-g0 / H[0, 0])
        lipschitz = float(np.max(np.linalg.eigvalsh(-H)))
        a = box.clip(np.linalg.solve(-H, g0.T).T)
    else:
        rng = np.random.default_rng(seed)
        lipschitz, sigma = _sampled_curvature(ctx, rng)
        if sigma <= 0:
            raise CertificationError(
                f"Non-concavity detected for player {i}: sampled monotonicity quotient {-sigma:.3g} is positive"
            )
        declared = getattr(game.utility, "declared_sigma", None)
        if declared:
            sigma = declared[i]
        a = np.broadcast_to(box.midpoint(), (ctx.batch, box.dim)).copy() if start is None else np.array(start, dtype=float)

    step = 1.0 / max(lipschitz, 1e-12)
    target = tol * min(1.0, sigma * step)
    residual = np.inf
    for it in range(max_iter):
        moved = box.clip(a + step * ctx.grad(a))
        residual = float(np.max(np.linalg.norm(moved - a, axis=-1)))
        a = moved
        if residual <= target:
            logger.debug(f"Projected ascent for player {i} converged in {it + 1} steps (residual={residual:.3e})")
            return a
    raise ConvergenceError(
        f"Projected ascent for player {i} hit {max_iter} iterations with residual {residual:.3e}",
        residual=residual,
    )


def best_response_nodes(game: GameSpec, i: int, rivals: Any, theta_nodes: np.ndarray,
                        rule: Optional[QuadratureRule] = None, tol: float = DEFAULT_TOL) -> np.ndarray:
    """A*_i(f_{-i}, θ) at every row of theta_nodes (B, d_i); returns (B, z_i)."""
    ctx = build_context(game, i, rivals, theta_nodes, rule)
    return solve_context(ctx, tol=tol)


def best_response_point(game: GameSpec, i: int, rivals: Any, theta_i: Any, tol: float = DEFAULT_TOL,
                        rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """A*_i(f_{-i}, θ_i) at a single type point."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    theta_i = game.type_space(i).check(theta_i, label=f"theta[{i}]").reshape(1, -1)
    return best_response_nodes(game, i, rivals, theta_i, rule, tol)[0]


def projected_stationarity_residual(game: GameSpec, i: int, rivals: Any, theta_i: Any, a_i: Any,
                                    rule: Optional[QuadratureRule] = None, step: Optional[float] = None) -> float:
    """‖a − Π_{A_i}(a + s ∇ϑ_i(a))‖, zero exactly at the maximizer."""
    theta_i = np.atleast_2d(np.asarray(theta_i, dtype=float))
    a_i = np.atleast_2d(np.asarray(a_i, dtype=float))
    ctx = build_context(game, i, rivals, theta_i, rule)
    if step is None:
        H = _own_hessian_if_quadratic(game, i)
        if H is not None:
            step = 1.0 / float(np.max(np.linalg.eigvalsh(-H)))
        else:
            step = 1.0 / _sampled_curvature(ctx, np.random.default_rng(0))[0]
    box = game.action_space(i)
    return float(np.max(np.linalg.norm(a_i - box.clip(a_i + step * ctx.grad(a_i)), axis=-1)))


# =====================================
# MODULI
# =====================================

def _spectral(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2)) if m.size else 0.0


def _max_abs_corner(box) -> np.ndarray:
    return np.maximum(np.abs(box.lower), np.abs(box.upper))


def _rival_volume(game: GameSpec, i: int) -> float:
    box = game.rival_type_box(i)
    return box.volume() if box is not None else 0.0


def _sampled_gamma(game: GameSpec, i: int, rng: np.random.Generator, budget: int) -> float:
    """Lipschitz modulus of θ_i ↦ q_i(θ_{-i}|θ_i) from random and nearby pairs."""
    rival = game.rival_type_box(i)
    if rival is None:
        return 0.0
    own = game.type_space(i)
    t1 = own.sample(rng, budget)
    near = own.clip(t1 + rng.normal(scale=1e-3, size=t1.shape) * own.widths)
    far = own.sample(rng, budget)
    t2 = np.where(np.arange(budget)[:, None] % 2 == 0, near, far)
    rest = rival.sample(rng, budget)
    density = game.density
    q1 = density.joint(density.assemble(i, t1, rest)) / density.marginal(i, t1)
    q2 = density.joint(density.assemble(i, t2, rest)) / density.marginal(i, t2)
    dist = np.maximum(np.linalg.norm(t1 - t2, axis=-1), 1e-300)
    return float(np.max(np.abs(q1 - q2) / dist)) * SAFETY_FACTOR


def _analytic_moduli(game: GameSpec, rng: np.random.Generator, budget: int, strategy_hint: Optional[StrategyProfile]):
    util: QuadraticUtility = game.utility
    n = game.n
    sigma, kappa, gamma, varrho, nu = [], [], [], [], []
    tau = [[0.0] * n for _ in range(n)]
    sources: Dict[str, str] = {}
    for i in range(n):
        sigma.append(float(np.min(np.linalg.eigvalsh(-util.own_hessian(i)))))
        for j in game.rivals(i):
            tau[i][j] = _spectral(util.cross_matrix(i, j))
        nu_i = _spectral(util.own_type_matrix(i))
        nu.append(nu_i)
        rival_e = [util.rival_type_matrix(i, j) for j in game.rivals(i)]
        varrho.append(_spectral(np.hstack(rival_e)) if rival_e else 0.0)
        g = game.density.conditional_lipschitz(i)
        if g is None:
            g = _sampled_gamma(game, i, rng, budget)
            sources[f"gamma[{i}]"] = ModuliSource.SAMPLED.value
        gamma.append(float(g))
        # only the θ_{-i}-varying part of ∇u_i survives integration against q(·|θ') − q(·|θ'')
        if strategy_hint is not None:
            varying = _hint_rival_gradient_bound(game, i, strategy_hint)
        else:
            varying = sum(_spectral(util.cross_matrix(i, j)) * float(np.linalg.norm(_max_abs_corner(game.action_space(j))))
                          for j in game.rivals(i))
            rival_box = game.rival_type_box(i)
            if rival_box is not None:
                varying += varrho[i] * float(np.linalg.norm(_max_abs_corner(rival_box)))
        kappa.append(nu_i + varying * gamma[i] * _rival_volume(game, i))
        if strategy_hint is not None:
            sources[f"kappa[{i}]"] = "strategy hint"
    return sigma, tau, kappa, gamma, varrho, nu, sources


def _hint_rival_gradient_bound(game: GameSpec, i: int, hint: StrategyProfile) -> float:
    """sup over rival types of ‖Σ_j C_ij f_j(θ_j) + Σ_j E_ij θ_j‖ on the hint's rival grids."""
    util: QuadraticUtility = game.utility
    rule = QuadratureRule(nodes_per_axis=16)
    rival_box = game.rival_type_box(i)
    if rival_box is None:
        return 0.0
    nodes, _ = rule.on_box(rival_box)
    full = game.density.assemble(i, np.zeros((1, game.type_space(i).dim)), nodes)
    total = np.zeros((nodes.shape[0], game.action_space(i).dim))
    for j in game.rivals(i):
        theta_j = full[:, game.density.own_slice(j)]
        total += hint[j].evaluate(theta_j) @ util.cross_matrix(i, j).T
        total += theta_j @ util.rival_type_matrix(i, j).T
    return float(np.max(np.linalg.norm(total, axis=-1)))


def _sampled_moduli(game: GameSpec, rng: np.random.Generator, budget: int):
    n = game.n
    util = game.utility
    sigma, kappa, gamma, varrho, nu = [], [], [], [], []
    tau = [[0.0] * n for _ in range(n)]
    sources: Dict[str, str] = {}
    declared = getattr(util, "declared_sigma", None)
    for i in range(n):
        quotients = monotonicity_quotients(game, i, rng, budget)
        worst = float(np.max(quotients))
        if declared:
            if worst > -declared[i] + 1e-8:
                raise CertificationError(
                    f"Declared σ_{i}={declared[i]} contradicted: sampled monotonicity quotient {worst:.6g}"
                )
            sigma.append(float(declared[i]))
            sources[f"sigma[{i}]"] = "declared"
        else:
            s = -worst / SAFETY_FACTOR
            if s <= 0:
                raise CertificationError(f"Strong concavity violated for player {i}: sampled quotient {worst:.6g} ≥ 0")
            sigma.append(s)

        actions, types = sample_profiles(game, rng, budget)
        base = game.utility.grad(i, actions, types)
        grad_norm_max = float(np.max(np.linalg.norm(base, axis=-1))) * SAFETY_FACTOR

        for j in game.rivals(i):
            moved = list(actions)
            moved[j] = game.action_space(j).sample(rng, budget)
            diff = np.linalg.norm(util.grad(i, moved, types) - base, axis=-1)
            dist = np.maximum(np.linalg.norm(moved[j] - actions[j], axis=-1), 1e-300)
            tau[i][j] = float(np.max(diff / dist)) * SAFETY_FACTOR

        moved_types = list(types)
        moved_types[i] = game.type_space(i).sample(rng, budget)
        diff = np.linalg.norm(util.grad(i, actions, moved_types) - base, axis=-1)
        dist = np.maximum(np.linalg.norm(moved_types[i] - types[i], axis=-1), 1e-300)
        nu_i = float(np.max(diff / dist)) * SAFETY_FACTOR
        nu.append(nu_i)

        if game.n > 1:
            moved_types = list(types)
            dist2 = np.zeros(budget)
            for j in game.rivals(i):
                moved_types[j] = game.type_space(j).sample(rng, budget)
                dist2 += np.sum((moved_types[j] - types[j]) ** 2, axis=-1)
            diff = np.linalg.norm(util.grad(i, actions, moved_types) - base, axis=-1)
            varrho.append(float(np.max(diff / np.sqrt(np.maximum(dist2, 1e-300)))) * SAFETY_FACTOR)
        else:
            varrho.append(0.0)

        g = game.density.conditional_lipschitz(i)
        if g is None:
            g = _sampled_gamma(game, i, rng, budget)
        else:
            sources[f"gamma[{i}]"] = ModuliSource.ANALYTIC.value
        gamma.append(float(g))
        kappa.append(nu_i + grad_norm_max * gamma[i] * _rival_volume(game, i))
    return sigma, tau, kappa, gamma, varrho, nu, sources


def estimate_moduli(game: GameSpec, strategy_hint: Optional[StrategyProfile] = None,
                    budget: int = MIN_BUDGET, seed: int = 0) -> ModuliReport:
    """
    Analytic moduli for quadratic utilities (Cournot included), sampled moduli
    with a 1.05 safety factor otherwise. The report carries α and the
    contraction verdict.

    With a `strategy_hint` the rival-gradient term of κ_i is evaluated along
    the hinted rival strategies instead of the action-box corners. That κ
    bounds the own-type modulus of responses to the hinted profile only, not
    to every profile; the report is tagged `hint_specific` and must not feed
    a certificate that quantifies over all strategies. σ, τ, ν and ϱ do not
    depend on the hint.
    """
    if budget < MIN_BUDGET:
        raise ValueError(f"Sampling budget must be at least {MIN_BUDGET}, got {budget}")
    rng = np.random.default_rng(seed)
    hint_specific = False
    if isinstance(game.utility, QuadraticUtility):
        sigma, tau, kappa, gamma, varrho, nu, sources = _analytic_moduli(game, rng, budget, strategy_hint)
        source = ModuliSource.ANALYTIC
        hint_specific = strategy_hint is not None
        if min(sigma) <= 0:
            raise CertificationError(f"Quadratic utility is not strongly concave: σ={sigma}")
    else:
        sigma, tau, kappa, gamma, varrho, nu, sources = _sampled_moduli(game, rng, budget)
        source = ModuliSource.SAMPLED
    report = ModuliReport(sigma=sigma, tau=tau, kappa=kappa, gamma=gamma, varrho=varrho, nu=nu,
                          source=source, samples=budget, sources=sources, hint_specific=hint_specific)
    verdict = "✅ contraction" if report.contraction_ok else "⚠️ no contraction"
    logger.info(f"Moduli for '{game.name}' ({source.value}): α={report.alpha:.6g}, β={report.beta:.6g}: {verdict}")
    return report


# =====================================
# LIPSCHITZ RESPONSE PROPERTIES
# =====================================

@dataclass
class LipschitzCheckReport:
    trials: int
    own_type_ratio: List[float]
    own_type_bound: List[float]
    rival_gap: List[float]
    violations: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trials": self.trials,
            "own_type_ratio": self.own_type_ratio,
            "own_type_bound": self.own_type_bound,
            "rival_gap": self.rival_gap,
            "violations": self.violations[:10],
            "passed": self.passed,
        }


def random_profile(game: GameSpec, rng: np.random.Generator, node_counts: int = 5) -> StrategyProfile:
    """Profile with independent uniform node values in each action box."""
    grids = []
    for i in range(game.n):
        template = StrategyGrid.constant(game.type_space(i), game.action_space(i), game.action_space(i).lower, node_counts)
        box = game.action_space(i)
        grids.append(template.with_values(rng.uniform(box.lower, box.upper, size=template.values.shape)))
    return StrategyProfile(tuple(grids))


def lipschitz_response_check(game: GameSpec, moduli: ModuliReport, trials: int = 500,
                             rule: Optional[QuadratureRule] = None, tol: float = 1e-6, p: Any = 2,
                             seed: int = 0, raise_on_failure: bool = False) -> LipschitzCheckReport:
    """
    Sampled check of the response bounds:
    ‖A*_i(f, θ') − A*_i(f, θ'')‖ ≤ (κ_i/σ_i)‖θ' − θ''‖ + tol, and
    ‖A*_i(f_{-i}, ·) − A*_i(g_{-i}, ·)‖_{L^p(η_i)} ≤ Σ_j (τ_ij/σ_i)‖f_j − g_j‖_{L^p(η_j)} + tol.
    Returns the worst ratios observed and any witnesses.
    """
    rng = np.random.default_rng(seed)
    rule = rule or QuadratureRule()
    own_ratio = [0.0] * game.n
    rival_gap = [-np.inf] * game.n
    violations: List[Dict[str, Any]] = []

    for trial in range(trials):
        f = random_profile(game, rng)
        g = random_profile(game, rng)
        for i in range(game.n):
            box = game.type_space(i)
            t = box.sample(rng, 2)
            responses = best_response_nodes(game, i, f, t, rule)
            lhs = float(np.linalg.norm(responses[0] - responses[1]))
            dist = float(np.linalg.norm(t[0] - t[1]))
            bound = moduli.response_moduli(i) * dist
            if dist > 0:
                own_ratio[i] = max(own_ratio[i], lhs / dist)
            if lhs > bound + tol:
                violations.append({"kind": "own_type", "trial": trial, "player": i,
                                   "theta": t.tolist(), "lhs": lhs, "bound": bound})

            nodes, weights = own_type_rule(game.density, i, rule)
            resp_f = best_response_nodes(game, i, f, nodes, rule)
            resp_g = best_response_nodes(game, i, g, nodes, rule)
            lhs_norm = lp_of_samples(np.linalg.norm(resp_f - resp_g, axis=-1), weights, parse_p(p))
            diffs = lp_norm_diff(f, g, p, game.density, rule).per_player
            rhs = sum(moduli.tau[i][j] / moduli.sigma[i] * diffs[j] for j in game.rivals(i))
            rival_gap[i] = max(rival_gap[i], lhs_norm - rhs)
            if lhs_norm > rhs + tol:
                violations.append({"kind": "rival", "trial": trial, "player": i, "lhs": lhs_norm, "bound": rhs})

    report = LipschitzCheckReport(
        trials=trials,
        own_type_ratio=own_ratio,
        own_type_bound=[moduli.response_moduli(i) for i in range(game.n)],
        rival_gap=[float(x) for x in rival_gap],
        violations=violations,
    )
    if violations:
        logger.warning(f"Lipschitz response check on '{game.name}': {len(violations)} violation(s)")
        if raise_on_failure:
            raise PropertyViolation("Lipschitz response bound violated", witness=violations[0])
    else:
        logger.info(f"Lipschitz response check on '{game.name}' passed ({trials} trials)")
    return report