# cournot.py - Named Cournot games and their closed-form oracles
"""
Builders for the symmetric two- and three-player Bayesian Cournot games, a
strategic-complements variant used by the monotone iteration, and the
closed-form equilibrium of the two-player game under an FGM type law.
"""

import logging
from typing import Optional

import numpy as np

from game_model import (
    BoxSpace,
    CournotUtility,
    DensityModel,
    FGMDensity,
    GameSpec,
    MixtureDensity,
    PlayerSpec,
    ProductUniformDensity,
    QuadraticUtility,
)

logger = logging.getLogger(__name__)

COURNOT2_DEFAULTS = {"alpha": 10.0, "beta": 1.0, "c": 1.0, "rho": 0.3}
COURNOT3_DEFAULTS = {"alpha": 10.0, "beta": 1.0, "c": 1.0}


def cournot2(alpha: float = 10.0, beta: float = 1.0, c: float = 1.0, rho: float = 0.3,
             action_upper: Optional[float] = None) -> GameSpec:
    """Two symmetric firms, Θ_i = [0, 1], A_i = [0, α/β], FGM(ρ) types."""
    a_max = alpha / beta if action_upper is None else action_upper
    players = tuple(PlayerSpec(BoxSpace([0.0], [1.0]), BoxSpace([0.0], [a_max])) for _ in range(2))
    density = FGMDensity([p.type_space for p in players], rho)
    return GameSpec(
        players=players,
        utility=CournotUtility(alpha, beta, c, n=2),
        density=density,
        name="cournot2",
        metadata={"assumptions": ["dominating functions of the integrability condition hold (bounded boxes)"]},
    )


def cournot3(alpha: float = 10.0, beta: float = 1.0, c: float = 1.0, theta_lower: float = 0.0,
             theta_upper: float = 1.0, action_upper: Optional[float] = None,
             density: Optional[DensityModel] = None) -> GameSpec:
    """Three symmetric firms with product-uniform types unless a density is given."""
    a_max = alpha / beta if action_upper is None else action_upper
    players = tuple(
        PlayerSpec(BoxSpace([theta_lower], [theta_upper]), BoxSpace([0.0], [a_max])) for _ in range(3)
    )
    density = density or ProductUniformDensity([p.type_space for p in players])
    return GameSpec(players=players, utility=CournotUtility(alpha, beta, c, n=3), density=density, name="cournot3")


def complements_game(alpha: float = 4.0, beta: float = 1.0, c: float = 1.0, beta_tilde: float = 0.5,
                     rho: float = 0.3, n: int = 2) -> GameSpec:
    """
    Quadratic game with strategic complements and responses increasing in own type:
    u_i = (α + θ_i) a_i − (β + c/2) a_i² + β̃ a_i Σ_{j≠i} a_j.
    Cross-partials are +β̃ ≥ 0, so Ψ is order-preserving.
    """
    sigma = 2 * beta + c
    a_max = (alpha + 1.0) / (sigma - (n - 1) * beta_tilde) * 1.5
    players = tuple(PlayerSpec(BoxSpace([0.0], [1.0]), BoxSpace([0.0], [a_max])) for _ in range(n))
    boxes = [p.type_space for p in players]
    density = FGMDensity(boxes, rho) if n >= 2 else ProductUniformDensity(boxes)
    utility = QuadraticUtility(
        H=[[[-sigma]] for _ in range(n)],
        b=[[alpha] for _ in range(n)],
        C=[{j: [[beta_tilde]] for j in range(n) if j != i} for i in range(n)],
        D=[[[1.0]] for _ in range(n)],
        action_dims=[1] * n,
        type_dims=[1] * n,
    )
    return GameSpec(players=players, utility=utility, density=density, name="complements")


# =====================================
# CLOSED FORMS (two-player FGM game)
# =====================================

def fgm_conditional_mean(theta_i, rho: float):
    """E[θ_j | θ_i] on the unit square under FGM(ρ)."""
    return 0.5 + rho * (2.0 * np.asarray(theta_i, dtype=float) - 1.0) / 6.0


def closed_form_equilibrium(theta_i, alpha: float = 10.0, beta: float = 1.0, c: float = 1.0, rho: float = 0.3):
    """f*_{i,ρ}(θ_i), the unique interior CBNE of the two-player FGM game."""
    theta_i = np.asarray(theta_i, dtype=float)
    intercept = alpha / (3 * beta + c) + beta * (3 - rho) / (2 * (3 * beta + c) * (6 * beta + 3 * c + beta * rho))
    return intercept - theta_i / (2 * beta + c + beta * rho / 3)


def closed_form_rho_derivative(theta_i, beta: float = 1.0, c: float = 1.0, rho: float = 0.3):
    """∂f*_{i,ρ}/∂ρ = 3β(2θ_i − 1) / (2(6β + 3c + βρ)²)."""
    theta_i = np.asarray(theta_i, dtype=float)
    return 3 * beta * (2 * theta_i - 1) / (2 * (6 * beta + 3 * c + beta * rho) ** 2)


def closed_form_drift(theta_i, rho1: float, rho2: float, beta: float = 1.0, c: float = 1.0):
    """Pointwise |f*_{ρ1} − f*_{ρ2}| bound, which is tight for this game."""
    theta_i = np.asarray(theta_i, dtype=float)
    return np.abs(3 * beta * (rho1 - rho2) * (2 * theta_i - 1)) / (
        2 * (beta * rho1 + 6 * beta + 3 * c) * (beta * rho2 + 6 * beta + 3 * c))


def uniform_drift_bound(rho1: float, rho2: float, beta: float = 1.0, c: float = 1.0) -> float:
    """3β / (2(5β + 3c)²) · |ρ1 − ρ2|, valid for all ρ1, ρ2 in (−1, 1)."""
    return 3 * beta / (2 * (5 * beta + 3 * c) ** 2) * abs(rho1 - rho2)


def fgm_equivalent_rho(density: DensityModel) -> Optional[float]:
    """ρ of an FGM law, or of a mixture of FGM laws on one box (itself FGM). None otherwise."""
    if isinstance(density, FGMDensity):
        return density.rho
    if isinstance(density, MixtureDensity):
        base = fgm_equivalent_rho(density.base)
        alt = fgm_equivalent_rho(density.alternative)
        if base is not None and alt is not None:
            return (1 - density.epsilon) * base + density.epsilon * alt
    return None


def is_symmetric_cournot2(game: GameSpec) -> bool:
    """True when the game is the two-player unit-type Cournot game the closed form covers."""
    util = game.utility
    if not isinstance(util, CournotUtility) or game.n != 2:
        return False
    if not (np.allclose(util.alpha, util.alpha[0]) and np.allclose(util.beta, util.beta[0])
            and np.allclose(util.c, util.c[0])):
        return False
    return all(np.allclose(game.type_space(i).lower, 0.0) and np.allclose(game.type_space(i).upper, 1.0)
               for i in range(2))
