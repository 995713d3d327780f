# expectation.py - Expected utility ϑ_i and its gradient
"""
Quadrature of u_i and ∇_{a_i}u_i against the conditional law of rival types.

The conditional density is evaluated pointwise at the quadrature nodes and
the weights are renormalized per conditioning node, so a rival-type-free
integrand is reproduced exactly.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from errors import ConditioningError, ShapeError
from game_model import BoxSpace, GameSpec

logger = logging.getLogger(__name__)

MAX_RIVAL_DIM = 4
DEFAULT_NODES = 32


class QuadratureKind(str, Enum):
    GAUSS_LEGENDRE = "gauss-legendre"
    TRAPEZOID = "trapezoid"


@lru_cache(maxsize=64)
def _axis_rule(kind: QuadratureKind, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    if kind == QuadratureKind.GAUSS_LEGENDRE:
        t, w = np.polynomial.legendre.leggauss(count)
        return 0.5 * (t + 1.0), 0.5 * w
    x = np.linspace(0.0, 1.0, count)
    w = np.full(count, 1.0 / (count - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product rule; `nodes_per_axis` applies to every axis of the integration box."""
    kind: QuadratureKind = QuadratureKind.GAUSS_LEGENDRE
    nodes_per_axis: int = DEFAULT_NODES

    def __post_init__(self):
        object.__setattr__(self, "kind", QuadratureKind(self.kind))
        minimum = 2 if self.kind == QuadratureKind.TRAPEZOID else 1
        if self.nodes_per_axis < minimum:
            raise ShapeError(f"{self.kind.value} needs at least {minimum} nodes per axis")

    def on_box(self, box: BoxSpace) -> Tuple[np.ndarray, np.ndarray]:
        """(nodes (Q, dim), weights (Q,)) with Σ weights = vol(box)."""
        return _tensor_rule(self.kind, self.nodes_per_axis, tuple(box.lower), tuple(box.upper))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "nodes_per_axis": self.nodes_per_axis}


@lru_cache(maxsize=128)
def _tensor_rule(kind: QuadratureKind, count: int, lower: Tuple[float, ...], upper: Tuple[float, ...]):
    x01, w01 = _axis_rule(kind, count)
    lower_arr = np.asarray(lower)
    widths = np.asarray(upper) - lower_arr
    grids = np.meshgrid(*[lower_arr[k] + widths[k] * x01 for k in range(len(lower))], indexing="ij")
    weights = np.ones(())
    for k in range(len(lower)):
        weights = np.multiply.outer(weights, widths[k] * w01)
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    nodes.setflags(write=False)
    flat = weights.reshape(-1)
    flat.setflags(write=False)
    return nodes, flat


def rival_evaluators(game: GameSpec, rivals: Any, i: int) -> List[Any]:
    """
    Normalize the rival-strategy argument to one evaluator per player (None at i).
    Accepts a StrategyProfile (anything with `.grids`) or a length-n sequence.
    """
    grids = getattr(rivals, "grids", rivals)
    if len(grids) != game.n:
        raise ShapeError(f"Expected {game.n} strategies, got {len(grids)}")
    return [None if j == i else grids[j] for j in range(game.n)]


@dataclass
class ExpectationContext:
    """
    Everything needed to evaluate ϑ_i(·, f_{-i}, θ_i) at a batch of B conditioning
    nodes: rival actions and types at the Q quadrature nodes and the (B, Q)
    matrix of normalized conditional weights.
    """
    game: GameSpec
    i: int
    theta_i: np.ndarray                 # (B, d_i)
    rival_types: List[np.ndarray]       # per player, (Q, d_j); own entry unused
    rival_actions: List[np.ndarray]     # per player, (Q, z_j); own entry unused
    weights: np.ndarray                 # (B, Q)
    raw_mass: np.ndarray = field(default=None)  # Σ_q w_q q(θ_q | θ_b) before renormalization

    @property
    def batch(self) -> int:
        return int(self.theta_i.shape[0])

    def _profiles(self, a_i: np.ndarray):
        # a_i: (..., B, z_i) -> broadcast against (B, Q)
        actions = []
        types = []
        for j in range(self.game.n):
            if j == self.i:
                actions.append(np.asarray(a_i, dtype=float)[..., :, None, :])
                types.append(self.theta_i[:, None, :])
            else:
                actions.append(self.rival_actions[j][None, :, :])
                types.append(self.rival_types[j][None, :, :])
        return actions, types

    def value(self, a_i: np.ndarray) -> np.ndarray:
        """ϑ_i at a_i with shape (..., B, z_i); returns (..., B)."""
        actions, types = self._profiles(a_i)
        u = self.game.utility.value(self.i, actions, types)
        return np.sum(u * self.weights, axis=-1)

    def grad(self, a_i: np.ndarray) -> np.ndarray:
        """∇_{a_i}ϑ_i at a_i with shape (..., B, z_i); returns (..., B, z_i)."""
        actions, types = self._profiles(a_i)
        g = self.game.utility.grad(self.i, actions, types)
        return np.sum(g * self.weights[..., None], axis=-2)


def build_context(game: GameSpec, i: int, rivals: Any, theta_i: np.ndarray,
                  rule: Optional[QuadratureRule] = None) -> ExpectationContext:
    """Precompute quadrature data for player i at conditioning nodes theta_i (B, d_i)."""
    rule = rule or QuadratureRule()
    theta_i = np.atleast_2d(np.asarray(theta_i, dtype=float))
    evaluators = rival_evaluators(game, rivals, i)
    density = game.density
    rival_box = game.rival_type_box(i)

    if rival_box is None:
        weights = np.ones((theta_i.shape[0], 1))
        empty = [np.zeros((1, game.type_space(j).dim)) for j in range(game.n)]
        return ExpectationContext(game, i, theta_i, empty, [np.zeros((1, game.action_space(j).dim)) for j in range(game.n)],
                                  weights, np.ones(theta_i.shape[0]))

    if rival_box.dim > MAX_RIVAL_DIM:
        raise ShapeError(
            f"Rival-type dimension {rival_box.dim} for player {i} exceeds the tensor-quadrature limit of {MAX_RIVAL_DIM}"
        )

    nodes, w = rule.on_box(rival_box)
    marg = np.asarray(density.marginal(i, theta_i), dtype=float)
    if np.any(marg <= 0):
        bad = int(np.flatnonzero(marg <= 0)[0])
        raise ConditioningError(f"Own-type marginal of player {i} vanishes at theta_i={theta_i[bad].tolist()}")
    cond = density.joint(density.assemble(i, theta_i[:, None, :], nodes[None, :, :])) / marg[:, None]
    raw = cond * w[None, :]
    mass = raw.sum(axis=1)
    if np.any(mass <= 0):
        raise ConditioningError(f"Conditional law of player {i} has no mass on the quadrature nodes")
    weights = raw / mass[:, None]

    rival_types: List[np.ndarray] = []
    rival_actions: List[np.ndarray] = []
    full = density.assemble(i, theta_i[:1, None, :], nodes[None, :, :])[0]
    for j in range(game.n):
        theta_j = full[:, density.own_slice(j)]
        rival_types.append(theta_j)
        if j == i:
            rival_actions.append(np.zeros((nodes.shape[0], game.action_space(j).dim)))
        else:
            rival_actions.append(np.asarray(evaluators[j].evaluate(theta_j), dtype=float).reshape(nodes.shape[0], -1))
    return ExpectationContext(game, i, theta_i, rival_types, rival_actions, weights, mass)


def _point_context(game: GameSpec, i: int, a_i: Any, rivals: Any, theta_i: Any, rule: Optional[QuadratureRule]):
    a_i = game.action_space(i).check(a_i, label=f"a[{i}]").reshape(1, -1)
    theta_i = game.type_space(i).check(theta_i, label=f"theta[{i}]").reshape(1, -1)
    return a_i, build_context(game, i, rivals, theta_i, rule)


def expected_utility(game: GameSpec, i: int, a_i: Any, rivals: Any, theta_i: Any,
                     rule: Optional[QuadratureRule] = None) -> float:
    """ϑ_i(a_i, f_{-i}, θ_i) by quadrature against η_i(·|θ_i)."""
    a_i, ctx = _point_context(game, i, a_i, rivals, theta_i, rule)
    return float(ctx.value(a_i)[0])


def expected_grad(game: GameSpec, i: int, a_i: Any, rivals: Any, theta_i: Any,
                  rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """∇_{a_i}ϑ_i(a_i, f_{-i}, θ_i); integration commutes with differentiation."""
    a_i, ctx = _point_context(game, i, a_i, rivals, theta_i, rule)
    return ctx.grad(a_i)[0]


def conditional_mass(game: GameSpec, i: int, theta_i: np.ndarray, rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """Σ_q w_q q_i(θ_q | θ_i) for each row of theta_i: the quadrature integral of the conditional density."""
    rule = rule or QuadratureRule()
    theta_i = np.atleast_2d(np.asarray(theta_i, dtype=float))
    rival_box = game.rival_type_box(i)
    if rival_box is None:
        return np.ones(theta_i.shape[0])
    nodes, w = rule.on_box(rival_box)
    marg = np.asarray(game.density.marginal(i, theta_i), dtype=float)
    if np.any(marg <= 0):
        raise ConditioningError(f"Own-type marginal of player {i} vanishes")
    joint = game.density.joint(game.density.assemble(i, theta_i[:, None, :], nodes[None, :, :]))
    return (joint * w[None, :]).sum(axis=1) / marg
