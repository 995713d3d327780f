# divergences.py - Distances between gridded type distributions
"""
W1, total variation and KL on cell-gridded probability measures, plus the
conditional-distance profiles the stability bounds are stated in.

Densities are discretized at cell centres (mass = density × cell volume,
renormalized). Conditionals are slices of the joint grid, renormalized,
so the KL chain rule holds exactly at grid level.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import ot
import pandas as pd
from scipy.special import rel_entr
from scipy.stats import wasserstein_distance

from errors import ConditioningError, ConfigError, ShapeError, SupportMismatch, TransportSizeError
from game_model import BoxSpace, DensityModel, GameSpec, MixtureDensity
from strategy_space import parse_p

logger = logging.getLogger(__name__)

MAX_TRANSPORT_CELLS = 4096
MAX_JOINT_CELLS = 2_000_000
KL_FLOOR = 1e-12
KL_RELIABLE_FRACTION = 1e-3
DEFAULT_CELLS = 41


@dataclass(frozen=True, eq=False)
class GriddedMeasure:
    """Probability masses on the cells of a regular tensor grid over `box`; masses has shape `cells`."""
    box: BoxSpace
    masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != self.box.dim:
            raise ShapeError(f"Masses of rank {masses.ndim} on a {self.box.dim}-dimensional box")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("Masses must be finite and non-negative")
        total = masses.sum()
        if total <= 0:
            raise ValueError("Measure has no mass")
        masses = masses / total
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)

    @property
    def cells(self) -> Tuple[int, ...]:
        return tuple(self.masses.shape)

    @property
    def size(self) -> int:
        return int(self.masses.size)

    def cell_widths(self) -> np.ndarray:
        return self.box.widths / np.asarray(self.cells)

    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths()))

    def axis_centres(self) -> List[np.ndarray]:
        h = self.cell_widths()
        return [self.box.lower[k] + (np.arange(c) + 0.5) * h[k] for k, c in enumerate(self.cells)]

    @property
    def centres(self) -> np.ndarray:
        """Cell centres flattened in C order, shape (N, dim)."""
        return _centres(self.box, self.cells)

    def flat(self) -> np.ndarray:
        return self.masses.reshape(-1)

    def marginal(self, axes: Sequence[int]) -> "GriddedMeasure":
        """Marginal on the given axes (summing out the rest)."""
        axes = sorted(axes)
        drop = tuple(k for k in range(self.box.dim) if k not in axes)
        sub = BoxSpace(self.box.lower[axes], self.box.upper[axes])
        return GriddedMeasure(sub, self.masses.sum(axis=drop))

    @classmethod
    def from_density(cls, density_fn: Any, box: BoxSpace, cells: Union[int, Sequence[int]]) -> "GriddedMeasure":
        """density_fn maps (N, dim) points to (N,) density values; evaluated at cell centres."""
        counts = _cell_counts(cells, box.dim)
        values = np.asarray(density_fn(_centres(box, counts)), dtype=float).reshape(counts)
        return cls(box, values * float(np.prod(box.widths / np.asarray(counts))))

    @classmethod
    def from_masses(cls, box: BoxSpace, masses: Any) -> "GriddedMeasure":
        return cls(box, np.asarray(masses, dtype=float))


def _cell_counts(cells: Union[int, Sequence[int]], dim: int) -> Tuple[int, ...]:
    if np.ndim(cells) == 0:
        counts = (int(cells),) * dim
    else:
        counts = tuple(int(c) for c in cells)
    if len(counts) != dim or any(c < 1 for c in counts):
        raise ShapeError(f"Invalid cell counts {counts} for dimension {dim}")
    return counts


def _centres(box: BoxSpace, counts: Tuple[int, ...]) -> np.ndarray:
    h = box.widths / np.asarray(counts)
    axes = [box.lower[k] + (np.arange(c) + 0.5) * h[k] for k, c in enumerate(counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _check_support(m1: GriddedMeasure, m2: GriddedMeasure) -> None:
    if m1.cells != m2.cells or not (np.allclose(m1.box.lower, m2.box.lower)
                                    and np.allclose(m1.box.upper, m2.box.upper)):
        raise SupportMismatch(
            f"Measures live on different grids: {m1.cells} on {m1.box.to_dict()} vs {m2.cells} on {m2.box.to_dict()}"
        )


# =====================================
# DISTANCES
# =====================================

class DistanceMetric(str, Enum):
    W1 = "w1"
    TV = "tv"
    KL = "kl"


def w1(m1: GriddedMeasure, m2: GriddedMeasure) -> float:
    """
    Wasserstein-1 with Euclidean ground cost on cell centres. One-dimensional
    supports use the CDF formula; otherwise exact network-simplex transport.
    """
    _check_support(m1, m2)
    if m1.box.dim == 1:
        x = m1.centres[:, 0]
        return float(wasserstein_distance(x, x, m1.flat(), m2.flat()))
    if m1.size > MAX_TRANSPORT_CELLS:
        raise TransportSizeError(f"Exact transport on {m1.size} cells exceeds the {MAX_TRANSPORT_CELLS}-cell limit")
    a, b = m1.flat(), m2.flat()
    # cells without mass on either side carry no flow
    keep_a = a > 0
    keep_b = b > 0
    centres = m1.centres
    cost = ot.dist(centres[keep_a], centres[keep_b], metric="euclidean")
    return float(ot.emd2(a[keep_a], b[keep_b], cost, numItermax=10_000_000))


def tv(m1: GriddedMeasure, m2: GriddedMeasure) -> float:
    """½ Σ |m1 − m2| over cells."""
    _check_support(m1, m2)
    return float(0.5 * np.abs(m1.masses - m2.masses).sum())


@dataclass
class KLResult:
    value: float
    floored_cells: int = 0
    floored_mass: float = 0.0

    @property
    def reliable(self) -> bool:
        return self.floored_mass <= KL_RELIABLE_FRACTION

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> Dict[str, Any]:
        return {"value": self.value, "floored_cells": self.floored_cells,
                "floored_mass": self.floored_mass, "reliable": self.reliable}


def kl(m1: GriddedMeasure, m2: GriddedMeasure) -> KLResult:
    """Σ m1 log(m1/m2), with m2 floored at 1e-12 where m1 > 0; flooring is reported."""
    _check_support(m1, m2)
    p, q = m1.flat(), m2.flat()
    floored = (q < KL_FLOOR) & (p > 0)
    value = float(np.sum(rel_entr(p, np.maximum(q, KL_FLOOR))))
    result = KLResult(value=max(value, 0.0), floored_cells=int(floored.sum()), floored_mass=float(p[floored].sum()))
    if not result.reliable:
        logger.warning(f"⚠️ KL flooring touched {result.floored_mass:.3%} of the mass; value is unreliable")
    return result


def distance(m1: GriddedMeasure, m2: GriddedMeasure, metric: Union[DistanceMetric, str]) -> float:
    metric = DistanceMetric(metric)
    if metric == DistanceMetric.W1:
        return w1(m1, m2)
    if metric == DistanceMetric.TV:
        return tv(m1, m2)
    return kl(m1, m2).value


# =====================================
# JOINT AND CONDITIONAL MEASURES
# =====================================

def joint_measure(density: DensityModel, cells: Union[int, Sequence[int]] = DEFAULT_CELLS) -> GriddedMeasure:
    """η discretized on the full type box."""
    counts = _cell_counts(cells, density.support.dim)
    if int(np.prod(counts)) > MAX_JOINT_CELLS:
        raise ShapeError(f"Joint grid of {int(np.prod(counts))} cells exceeds {MAX_JOINT_CELLS}")
    return GriddedMeasure.from_density(density.joint, density.support, counts)


def conditional_measures(joint: GriddedMeasure, own_axes: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, BoxSpace]:
    """
    Slice the joint grid at every own-axis cell.

    Returns (own marginal masses (N_own,), conditional masses (N_own, *rest_cells), rest box).
    Rows with zero own mass are left as zeros.
    """
    own_axes = sorted(own_axes)
    rest_axes = [k for k in range(joint.box.dim) if k not in own_axes]
    if not rest_axes:
        raise ShapeError("No rival axes to condition on")
    moved = np.moveaxis(joint.masses, own_axes, list(range(len(own_axes))))
    rest_shape = moved.shape[len(own_axes):]
    table = moved.reshape((-1,) + rest_shape)
    own_mass = table.reshape(table.shape[0], -1).sum(axis=1)
    cond = np.zeros_like(table)
    positive = own_mass > 0
    cond[positive] = table[positive] / own_mass[positive].reshape((-1,) + (1,) * len(rest_shape))
    rest_box = BoxSpace(joint.box.lower[rest_axes], joint.box.upper[rest_axes])
    return own_mass, cond, rest_box


def conditional_measure(joint: GriddedMeasure, own_axes: Sequence[int], own_index: Sequence[int]) -> GriddedMeasure:
    """η_i(·|θ_i) at the own-axis cell `own_index`."""
    own_mass, cond, rest_box = conditional_measures(joint, own_axes)
    own_cells = tuple(joint.cells[k] for k in sorted(own_axes))
    flat = int(np.ravel_multi_index(tuple(own_index), own_cells))
    if own_mass[flat] <= 0:
        raise ConditioningError(f"Own-type cell {tuple(own_index)} carries no mass")
    return GriddedMeasure(rest_box, cond[flat])


def _own_axes(density: DensityModel, i: int) -> List[int]:
    return list(range(int(density.offsets[i]), int(density.offsets[i + 1])))


# =====================================
# PERTURBATIONS
# =====================================

class PerturbationKind(str, Enum):
    DIRECT = "direct"
    MIXTURE = "mixture"


@dataclass
class PerturbationSpec:
    """η (base) and the perturbing law: μ = alternative, or μ = (1−ε)η + εη̂ for mixtures."""
    base: DensityModel
    alternative: DensityModel
    kind: PerturbationKind = PerturbationKind.DIRECT
    epsilon: float = 1.0
    admissibility: Optional[Any] = None

    def __post_init__(self):
        self.kind = PerturbationKind(self.kind)
        if not (0.0 <= self.epsilon <= 1.0):
            raise ConfigError(f"Mixture weight must lie in [0, 1], got {self.epsilon}", paths=["epsilon"])
        if self.base.support.dim != self.alternative.support.dim or not (
                np.allclose(self.base.support.lower, self.alternative.support.lower)
                and np.allclose(self.base.support.upper, self.alternative.support.upper)):
            raise SupportMismatch("Base and alternative densities live on different type spaces")

    @property
    def mu(self) -> DensityModel:
        if self.kind == PerturbationKind.DIRECT:
            return self.alternative
        return MixtureDensity(self.base, self.alternative, self.epsilon)

    def with_epsilon(self, epsilon: float) -> "PerturbationSpec":
        return PerturbationSpec(self.base, self.alternative, PerturbationKind.MIXTURE, epsilon)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "epsilon": self.epsilon,
            "base": self.base.to_dict(),
            "alternative": self.alternative.to_dict(),
            "admissibility": self.admissibility.to_dict() if self.admissibility is not None else None,
        }


def likelihood_ratio_constants(base: DensityModel, mu: DensityModel,
                               cells: Union[int, Sequence[int]] = DEFAULT_CELLS) -> Dict[str, Any]:
    """
    Per player C_i = max over own cells of Σ_rest (λ/λ_i)² η_i(·|θ_i), λ = dμ/dη
    on the grid, λ_i the own-marginal ratio. Zero cells make C_i infinite and
    are returned as witnesses.
    """
    eta = joint_measure(base, cells)
    nu = joint_measure(mu, cells)
    zero_eta = np.argwhere(eta.masses <= 0)
    zero_mu = np.argwhere(nu.masses <= 0)
    witness = None
    if zero_eta.size or zero_mu.size:
        which, cell = ("base", zero_eta[0]) if zero_eta.size else ("perturbed", zero_mu[0])
        centre = [float(eta.axis_centres()[k][c]) for k, c in enumerate(cell)]
        witness = {"density": which, "cell": [int(c) for c in cell], "centre": centre}
        return {"constants": [float("inf")] * base.n, "positive": False, "witness": witness}

    ratio = nu.masses / eta.masses
    constants = []
    for i in range(base.n):
        own = _own_axes(base, i)
        if len(own) == base.support.dim:
            constants.append(1.0)
            continue
        eta_own, eta_cond, _ = conditional_measures(eta, own)
        nu_own, _, _ = conditional_measures(nu, own)
        lam_i = nu_own / eta_own
        moved = np.moveaxis(ratio, own, list(range(len(own)))).reshape(eta_cond.shape)
        scaled = (moved / lam_i.reshape((-1,) + (1,) * (moved.ndim - 1))) ** 2
        constants.append(float(np.max(np.sum((scaled * eta_cond).reshape(eta_cond.shape[0], -1), axis=1))))
    return {"constants": constants, "positive": True, "witness": witness}


# =====================================
# CONDITIONAL PROFILES
# =====================================

@dataclass
class ConditionalProfile:
    metric: DistanceMetric
    p: float
    player: int
    nodes: np.ndarray        # own-type cell centres, (N, d_i)
    values: np.ndarray       # distance at each node
    weights: np.ndarray      # own-marginal masses under η
    kl_floored_mass: float = 0.0

    @property
    def aggregate(self) -> float:
        """L^p(η_i) aggregate of the per-node distances."""
        if np.isinf(self.p):
            return self.max
        return float(np.sum(self.weights * self.values ** self.p) ** (1.0 / self.p))

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.nodes, columns=[f"theta_{k}" for k in range(self.nodes.shape[1])])
        frame["weight"] = self.weights
        frame[self.metric.value] = self.values
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric.value,
            "p": "inf" if np.isinf(self.p) else self.p,
            "player": self.player,
            "aggregate": self.aggregate,
            "max": self.max,
            "nodes": self.nodes.tolist(),
            "values": self.values.tolist(),
            "kl_floored_mass": self.kl_floored_mass,
        }


def conditional_distance_profile(game: GameSpec, spec: PerturbationSpec, i: int,
                                 metric: Union[DistanceMetric, str] = DistanceMetric.W1, p: Any = 2,
                                 cells: Union[int, Sequence[int]] = DEFAULT_CELLS) -> ConditionalProfile:
    """
    d(η_i(·|θ_i), μ_i(·|θ_i)) at every own-type cell centre, with the L^p(η_i)
    aggregate and the max. Odd cell counts put a node on the type-box midpoint.
    """
    metric = DistanceMetric(metric)
    p = parse_p(p)
    if spec.admissibility is None:
        logger.warning("Conditional profile requested before admissibility was computed")
    eta = joint_measure(spec.base, cells)
    mu = joint_measure(spec.mu, cells)
    own = _own_axes(game.density, i)
    eta_own, eta_cond, rest_box = conditional_measures(eta, own)
    mu_own, mu_cond, _ = conditional_measures(mu, own)
    if np.any(eta_own <= 0) or np.any(mu_own <= 0):
        raise ConditioningError(f"Own-type marginal of player {i} vanishes on the grid")

    values = np.empty(eta_own.size)
    floored = 0.0
    for b in range(eta_own.size):
        m1 = GriddedMeasure(rest_box, eta_cond[b])
        m2 = GriddedMeasure(rest_box, mu_cond[b])
        if metric == DistanceMetric.KL:
            res = kl(m1, m2)
            values[b] = res.value
            floored = max(floored, res.floored_mass)
        else:
            values[b] = distance(m1, m2, metric)

    own_box = BoxSpace(eta.box.lower[own], eta.box.upper[own])
    nodes = _centres(own_box, tuple(eta.cells[k] for k in own))
    return ConditionalProfile(metric=metric, p=p, player=i, nodes=nodes, values=values,
                              weights=eta_own, kl_floored_mass=floored)


def joint_conditional_w1_gap(game: GameSpec, spec: PerturbationSpec, i: int,
                             cells: Union[int, Sequence[int]] = DEFAULT_CELLS) -> Dict[str, float]:
    """
    Joint W1(η, μ) against the η_i-average of conditional W1. With equal
    own-type marginals the joint distance is at most the average.
    """
    eta = joint_measure(spec.base, cells)
    mu = joint_measure(spec.mu, cells)
    joint = w1(eta, mu)
    profile = conditional_distance_profile(game, spec, i, DistanceMetric.W1, p=1, cells=cells)
    average = profile.aggregate
    return {"joint_w1": joint, "average_conditional_w1": average, "gap": joint - average}


def kl_chain_average(game: GameSpec, spec: PerturbationSpec, i: int,
                     cells: Union[int, Sequence[int]] = DEFAULT_CELLS) -> Dict[str, float]:
    """∫ KL(η_i(·|θ_i) ‖ μ_i(·|θ_i)) dη_i next to KL(η ‖ μ) on the same grid."""
    profile = conditional_distance_profile(game, spec, i, DistanceMetric.KL, p=1, cells=cells)
    joint = kl(joint_measure(spec.base, cells), joint_measure(spec.mu, cells)).value
    return {"average_conditional_kl": profile.aggregate, "joint_kl": joint}
