# game_model.py - Bayesian game instances
"""
Box spaces, utility models with analytic gradients, joint/marginal/conditional
type densities, and the immutable GameSpec that bundles them.

Array conventions used throughout the package:
- an action profile is a list with one array per player, shape (..., z_j)
- a type profile is a list with one array per player, shape (..., d_j)
Leading axes broadcast, so one call can evaluate many nodes at once.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import RegularGridInterpolator

from errors import ConditioningError, ConfigError, DomainError, ShapeError

logger = logging.getLogger(__name__)

BOX_TOL = 1e-12
FD_STEP = 1e-5


# =====================================
# SPACES
# =====================================

@dataclass(frozen=True, eq=False)
class BoxSpace:
    """Axis-aligned box [lower, upper]; a complete lattice under the coordinatewise order."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ShapeError(f"Box bounds must be 1-D arrays of equal length, got {lower.shape} and {upper.shape}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigError("Box bounds must be finite")
        bad = np.flatnonzero(~(lower < upper))
        if bad.size:
            k = int(bad[0])
            raise ConfigError(f"Degenerate box: lower[{k}]={lower[k]} is not below upper[{k}]={upper[k]}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def top(self) -> np.ndarray:
        return self.upper.copy()

    def bottom(self) -> np.ndarray:
        return self.lower.copy()

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray, tol: float = BOX_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def check(self, x: Any, label: str = "point") -> np.ndarray:
        """Return x as a float vector, raising DomainError naming the first violated coordinate."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{label} has dimension {x.shape[-1]}, expected {self.dim}")
        flat = x.reshape(-1, self.dim)
        for k in range(self.dim):
            col = flat[:, k]
            low = col < self.lower[k] - BOX_TOL
            high = col > self.upper[k] + BOX_TOL
            if np.any(low) or np.any(high):
                value = float(col[low | high][0])
                raise DomainError(
                    f"{label}[{k}]={value} outside [{self.lower[k]}, {self.upper[k]}]",
                    coordinate=k, value=value,
                )
        return x

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def to_dict(self) -> Dict[str, Any]:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def concat_boxes(boxes: Sequence[BoxSpace]) -> BoxSpace:
    return BoxSpace(np.concatenate([b.lower for b in boxes]), np.concatenate([b.upper for b in boxes]))


@dataclass(frozen=True, eq=False)
class PlayerSpec:
    type_space: BoxSpace
    action_space: BoxSpace


# =====================================
# UTILITY MODELS
# =====================================

class UtilityKind(str, Enum):
    LINEAR_QUADRATIC_COURNOT = "cournot"
    GENERAL_QUADRATIC = "quadratic"
    CUSTOM = "custom"


class UtilityModel(ABC):
    """u_i(a_i, a_{-i}, θ) and ∇_{a_i}u_i for every player."""

    kind: UtilityKind
    is_quadratic: bool = False

    @abstractmethod
    def value(self, i: int, actions: Sequence[np.ndarray], types: Sequence[np.ndarray]) -> np.ndarray:
        ...

    @abstractmethod
    def grad(self, i: int, actions: Sequence[np.ndarray], types: Sequence[np.ndarray]) -> np.ndarray:
        ...

    def validate_dims(self, players: Sequence[PlayerSpec]) -> None:
        """Hook for models that know their own dimensions."""

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value}


def _as_matrix(m: Any, rows: int, cols: int, label: str) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 0:
        arr = np.full((rows, cols), float(arr)) if rows == cols == 1 else arr * np.eye(rows, cols)
    arr = np.atleast_2d(arr)
    if arr.shape != (rows, cols):
        raise ShapeError(f"{label} has shape {arr.shape}, expected {(rows, cols)}")
    return arr


class QuadraticUtility(UtilityModel):
    """
    u_i = ½ a_iᵀ H_i a_i + a_iᵀ Σ_j C_ij a_j + a_iᵀ (b_i + D_i θ_i + Σ_j E_ij θ_j)

    Coefficients are stored per player; C[i] and E[i] map rival index j to a matrix.
    Missing rival entries are zero.
    """

    kind = UtilityKind.GENERAL_QUADRATIC
    is_quadratic = True

    def __init__(
        self,
        H: Sequence[Any],
        b: Sequence[Any],
        C: Optional[Sequence[Dict[int, Any]]] = None,
        D: Optional[Sequence[Any]] = None,
        E: Optional[Sequence[Dict[int, Any]]] = None,
        action_dims: Optional[Sequence[int]] = None,
        type_dims: Optional[Sequence[int]] = None,
    ):
        n = len(H)
        self.n = n
        self.action_dims = list(action_dims) if action_dims else [int(np.atleast_1d(np.asarray(b[i])).size) for i in range(n)]
        self.type_dims = list(type_dims) if type_dims else [1] * n
        self.H = [_as_matrix(H[i], self.action_dims[i], self.action_dims[i], f"H[{i}]") for i in range(n)]
        self.H_sym = [0.5 * (h + h.T) for h in self.H]
        self.b = [np.atleast_1d(np.asarray(b[i], dtype=float)) for i in range(n)]
        C = C or [{} for _ in range(n)]
        E = E or [{} for _ in range(n)]
        self.C: List[Dict[int, np.ndarray]] = []
        self.E: List[Dict[int, np.ndarray]] = []
        for i in range(n):
            self.C.append({
                int(j): _as_matrix(m, self.action_dims[i], self.action_dims[int(j)], f"C[{i}][{j}]")
                for j, m in C[i].items() if int(j) != i
            })
            self.E.append({
                int(j): _as_matrix(m, self.action_dims[i], self.type_dims[int(j)], f"E[{i}][{j}]")
                for j, m in E[i].items() if int(j) != i
            })
        if D is None:
            self.D = [np.zeros((self.action_dims[i], self.type_dims[i])) for i in range(n)]
        else:
            self.D = [_as_matrix(D[i], self.action_dims[i], self.type_dims[i], f"D[{i}]") for i in range(n)]

    def validate_dims(self, players: Sequence[PlayerSpec]) -> None:
        if len(players) != self.n:
            raise ConfigError(f"Utility declares {self.n} players, game has {len(players)}")
        for i, p in enumerate(players):
            if p.action_space.dim != self.action_dims[i] or p.type_space.dim != self.type_dims[i]:
                raise ConfigError(
                    f"Utility dims for player {i} are (z={self.action_dims[i]}, d={self.type_dims[i]}), "
                    f"game declares (z={p.action_space.dim}, d={p.type_space.dim})"
                )

    def _linear_part(self, i: int, actions: Sequence[np.ndarray], types: Sequence[np.ndarray]) -> np.ndarray:
        lin = self.b[i] + np.einsum("kl,...l->...k", self.D[i], types[i])
        for j, Cij in self.C[i].items():
            lin = lin + np.einsum("kl,...l->...k", Cij, actions[j])
        for j, Eij in self.E[i].items():
            lin = lin + np.einsum("kl,...l->...k", Eij, types[j])
        return lin

    def value(self, i, actions, types):
        a_i = actions[i]
        quad = 0.5 * np.einsum("...k,kl,...l->...", a_i, self.H[i], a_i)
        return quad + np.einsum("...k,...k->...", a_i, self._linear_part(i, actions, types))

    def grad(self, i, actions, types):
        return np.einsum("kl,...l->...k", self.H_sym[i], actions[i]) + self._linear_part(i, actions, types)

    # Curvature data consumed by the analytic moduli and the exact solver
    def own_hessian(self, i: int) -> np.ndarray:
        return self.H_sym[i]

    def cross_matrix(self, i: int, j: int) -> np.ndarray:
        return self.C[i].get(j, np.zeros((self.action_dims[i], self.action_dims[j])))

    def own_type_matrix(self, i: int) -> np.ndarray:
        return self.D[i]

    def rival_type_matrix(self, i: int, j: int) -> np.ndarray:
        return self.E[i].get(j, np.zeros((self.action_dims[i], self.type_dims[j])))

    def reversed_for(self, j: int, shift: np.ndarray) -> "QuadraticUtility":
        """
        Coefficients after a_j ↦ shift − a_j. Rival utilities are unchanged;
        u_j changes only by terms free of a_j, so optimal responses agree.
        """
        shift = np.asarray(shift, dtype=float)
        H, b, C, D, E = list(self.H), list(self.b), [dict(c) for c in self.C], list(self.D), [dict(e) for e in self.E]
        for i in range(self.n):
            if i != j and j in C[i]:
                b[i] = b[i] + C[i][j] @ shift
                C[i][j] = -C[i][j]
        b[j] = -b[j] - self.H_sym[j] @ shift
        C[j] = {k: -m for k, m in C[j].items()}
        D[j] = -D[j]
        E[j] = {k: -m for k, m in E[j].items()}
        return QuadraticUtility(H=H, b=b, C=C, D=D, E=E, action_dims=self.action_dims, type_dims=self.type_dims)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "players": [
                {
                    "H": self.H[i].tolist(),
                    "b": self.b[i].tolist(),
                    "C": {str(j): m.tolist() for j, m in self.C[i].items()},
                    "D": self.D[i].tolist(),
                    "E": {str(j): m.tolist() for j, m in self.E[i].items()},
                }
                for i in range(self.n)
            ],
        }


class CournotUtility(QuadraticUtility):
    """
    u_i = a_i·(α_i − β_i Σ_j a_j) − θ_i a_i − (c_i/2) a_i²
        = (α_i − θ_i) a_i − (β_i + c_i/2) a_i² − β_i a_i Σ_{j≠i} a_j
    """

    kind = UtilityKind.LINEAR_QUADRATIC_COURNOT

    def __init__(self, alpha: Any, beta: Any, c: Any, n: int):
        self.alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n,)).copy()
        self.beta = np.broadcast_to(np.asarray(beta, dtype=float), (n,)).copy()
        self.c = np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
        if np.any(self.beta <= 0) or np.any(self.c <= 0):
            raise ConfigError("Cournot requires beta > 0 and c > 0 for every player")
        super().__init__(
            H=[[[-(2 * self.beta[i] + self.c[i])]] for i in range(n)],
            b=[[self.alpha[i]] for i in range(n)],
            C=[{j: [[-self.beta[i]]] for j in range(n) if j != i} for i in range(n)],
            D=[[[-1.0]] for _ in range(n)],
            action_dims=[1] * n,
            type_dims=[1] * n,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "alpha": self.alpha.tolist(), "beta": self.beta.tolist(), "c": self.c.tolist()}


class CustomUtility(UtilityModel):
    """User-supplied evaluators. The gradient must be analytic; it is never replaced by finite differences."""

    kind = UtilityKind.CUSTOM

    def __init__(
        self,
        value_fn: Callable[[int, Sequence[np.ndarray], Sequence[np.ndarray]], np.ndarray],
        grad_fn: Callable[[int, Sequence[np.ndarray], Sequence[np.ndarray]], np.ndarray],
        declared_sigma: Optional[Sequence[float]] = None,
        name: str = "custom",
    ):
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self.declared_sigma = None if declared_sigma is None else [float(s) for s in declared_sigma]
        self.name = name

    def value(self, i, actions, types):
        return np.asarray(self._value_fn(i, actions, types), dtype=float)

    def grad(self, i, actions, types):
        return np.asarray(self._grad_fn(i, actions, types), dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "name": self.name, "declared_sigma": self.declared_sigma}


class ReversedUtility(UtilityModel):
    """Any utility seen through a_j ↦ shift − a_j; player j's gradient changes sign."""

    kind = UtilityKind.CUSTOM

    def __init__(self, inner: UtilityModel, j: int, shift: np.ndarray):
        self.inner = inner
        self.j = j
        self.shift = np.asarray(shift, dtype=float)
        self.declared_sigma = getattr(inner, "declared_sigma", None)

    def _actions(self, actions: Sequence[np.ndarray]) -> List[np.ndarray]:
        out = list(actions)
        out[self.j] = self.shift - actions[self.j]
        return out

    def value(self, i, actions, types):
        return self.inner.value(i, self._actions(actions), types)

    def grad(self, i, actions, types):
        g = self.inner.grad(i, self._actions(actions), types)
        return -g if i == self.j else g

    def validate_dims(self, players: Sequence[PlayerSpec]) -> None:
        self.inner.validate_dims(players)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "reversed_player": self.j, "inner": self.inner.to_dict()}


# =====================================
# DENSITY MODELS
# =====================================

class DensityKind(str, Enum):
    PRODUCT_UNIFORM = "uniform"
    FGM = "fgm"
    GRID_TABULATED = "tabulated"
    MIXTURE = "mixture"


class DensityModel(ABC):
    """
    Joint type density on Θ = Θ_1 × … × Θ_n with own-type marginals and
    rival-type conditionals. Full type vectors are the concatenation of the
    players' type coordinates in player order.
    """

    kind: DensityKind

    def __init__(self, type_boxes: Sequence[BoxSpace]):
        self.type_boxes = list(type_boxes)
        self.dims = [b.dim for b in self.type_boxes]
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        self.support = concat_boxes(self.type_boxes)

    @property
    def n(self) -> int:
        return len(self.type_boxes)

    def own_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def rival_columns(self, i: int) -> np.ndarray:
        own = np.arange(self.offsets[i], self.offsets[i + 1])
        return np.setdiff1d(np.arange(self.support.dim), own)

    def rival_box(self, i: int) -> Optional[BoxSpace]:
        cols = self.rival_columns(i)
        if cols.size == 0:
            return None
        return BoxSpace(self.support.lower[cols], self.support.upper[cols])

    def assemble(self, i: int, theta_i: np.ndarray, theta_rest: np.ndarray) -> np.ndarray:
        """Interleave own and rival coordinates into full type vectors (broadcasting)."""
        theta_i = np.asarray(theta_i, dtype=float)
        theta_rest = np.asarray(theta_rest, dtype=float)
        shape = np.broadcast_shapes(theta_i.shape[:-1], theta_rest.shape[:-1])
        full = np.empty(shape + (self.support.dim,))
        full[..., self.own_slice(i)] = theta_i
        full[..., self.rival_columns(i)] = theta_rest
        return full

    def split(self, theta: np.ndarray) -> List[np.ndarray]:
        return [theta[..., self.own_slice(i)] for i in range(self.n)]

    @abstractmethod
    def joint(self, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def marginal(self, i: int, theta_i: np.ndarray) -> np.ndarray:
        ...

    def conditional(self, i: int, theta_i: np.ndarray, theta_rest: np.ndarray) -> np.ndarray:
        marg = np.asarray(self.marginal(i, theta_i), dtype=float)
        if np.any(marg <= 0):
            raise ConditioningError(f"Own-type marginal of player {i} vanishes at a conditioning point")
        # callers line up leading axes so marg broadcasts against the joint
        return self.joint(self.assemble(i, theta_i, theta_rest)) / marg

    def conditional_lipschitz(self, i: int) -> Optional[float]:
        """Analytic γ_i when available, else None (sampled by the moduli estimator)."""
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value}


class ProductUniformDensity(DensityModel):
    kind = DensityKind.PRODUCT_UNIFORM

    def joint(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.full(theta.shape[:-1], 1.0 / self.support.volume())

    def marginal(self, i, theta_i):
        theta_i = np.asarray(theta_i, dtype=float)
        return np.full(theta_i.shape[:-1], 1.0 / self.type_boxes[i].volume())

    def conditional_lipschitz(self, i):
        return 0.0


class FGMDensity(DensityModel):
    """
    q(θ) = (1 + ρ Π_k (2 s_k − 1)) / vol(Θ), s_k = (θ_k − lower_k) / width_k.
    Every proper sub-marginal is uniform; strictly positive for |ρ| < 1.
    """

    kind = DensityKind.FGM

    def __init__(self, type_boxes: Sequence[BoxSpace], rho: float):
        super().__init__(type_boxes)
        rho = float(rho)
        if not (-1.0 < rho < 1.0):
            raise ConfigError(f"FGM requires -1 < rho < 1, got rho={rho}", paths=["density.rho"])
        if self.support.dim < 2:
            raise ConfigError("FGM needs at least two type coordinates")
        self.rho = rho

    def _signs(self, theta: np.ndarray) -> np.ndarray:
        s = (np.asarray(theta, dtype=float) - self.support.lower) / self.support.widths
        return np.prod(2.0 * s - 1.0, axis=-1)

    def joint(self, theta):
        return (1.0 + self.rho * self._signs(theta)) / self.support.volume()

    def marginal(self, i, theta_i):
        theta_i = np.asarray(theta_i, dtype=float)
        if self.rival_columns(i).size == 0:
            return self.joint(theta_i)
        return np.full(theta_i.shape[:-1], 1.0 / self.type_boxes[i].volume())

    def conditional_lipschitz(self, i):
        rival = self.rival_box(i)
        rival_volume = rival.volume() if rival is not None else 1.0
        widths = self.type_boxes[i].widths
        return float(2.0 * abs(self.rho) * np.sqrt(np.sum(1.0 / widths ** 2)) / rival_volume)

    def to_dict(self):
        return {"kind": self.kind.value, "rho": self.rho}


class GridTabulatedDensity(DensityModel):
    """
    Node values on a tensor grid covering Θ, piecewise-multilinear in between.
    Renormalized on load with the trapezoid rule, which integrates the
    multilinear interpolant exactly; marginals use the same rule.
    """

    kind = DensityKind.GRID_TABULATED

    def __init__(self, type_boxes: Sequence[BoxSpace], axes: Sequence[Any], values: Any):
        super().__init__(type_boxes)
        self.axes = [np.asarray(ax, dtype=float) for ax in axes]
        values = np.asarray(values, dtype=float)
        if len(self.axes) != self.support.dim:
            raise ShapeError(f"Tabulated density needs {self.support.dim} axes, got {len(self.axes)}")
        if values.shape != tuple(ax.size for ax in self.axes):
            raise ShapeError(f"Tabulated values have shape {values.shape}, axes imply {tuple(ax.size for ax in self.axes)}")
        for k, ax in enumerate(self.axes):
            if ax.size < 2 or np.any(np.diff(ax) <= 0):
                raise ConfigError(f"Axis {k} must be strictly increasing with at least 2 nodes", paths=[f"density.axes.{k}"])
            if not (np.isclose(ax[0], self.support.lower[k]) and np.isclose(ax[-1], self.support.upper[k])):
                raise ConfigError(f"Axis {k} must span the type box [{self.support.lower[k]}, {self.support.upper[k]}]",
                                  paths=[f"density.axes.{k}"])
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigError("Tabulated density values must be finite and non-negative", paths=["density.values"])
        total = self._integrate(values, range(self.support.dim))
        if total <= 0:
            raise ConfigError("Tabulated density integrates to zero", paths=["density.values"])
        self.values = values / total
        self._joint = RegularGridInterpolator(self.axes, self.values, method="linear")
        self._marginals = []
        for i in range(self.n):
            own = list(range(int(self.offsets[i]), int(self.offsets[i + 1])))
            rival = [k for k in range(self.support.dim) if k not in own]
            table = self.values
            for k in sorted(rival, reverse=True):
                table = trapezoid(table, self.axes[k], axis=k)
            self._marginals.append(RegularGridInterpolator([self.axes[k] for k in own], table, method="linear"))
        logger.debug(f"GridTabulatedDensity loaded: shape={self.values.shape}, raw mass={total:.6g}")

    def _integrate(self, values: np.ndarray, axes_idx) -> float:
        out = values
        for k in sorted(axes_idx, reverse=True):
            out = trapezoid(out, self.axes[k], axis=k)
        return float(out)

    def _eval(self, interp: RegularGridInterpolator, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        return interp(flat).reshape(x.shape[:-1])

    def joint(self, theta):
        return self._eval(self._joint, theta)

    def marginal(self, i, theta_i):
        return self._eval(self._marginals[i], theta_i)

    def to_dict(self):
        return {"kind": self.kind.value, "axes": [ax.tolist() for ax in self.axes], "values": self.values.tolist()}


class MixtureDensity(DensityModel):
    """(1 − ε) q_base + ε q_alternative."""

    kind = DensityKind.MIXTURE

    def __init__(self, base: DensityModel, alternative: DensityModel, epsilon: float):
        super().__init__(base.type_boxes)
        if not (0.0 <= float(epsilon) <= 1.0):
            raise ConfigError(f"Mixture weight must lie in [0, 1], got {epsilon}", paths=["density.epsilon"])
        if not _same_boxes(base.type_boxes, alternative.type_boxes):
            raise ConfigError("Mixture components live on different type spaces")
        self.base = base
        self.alternative = alternative
        self.epsilon = float(epsilon)

    def joint(self, theta):
        return (1.0 - self.epsilon) * self.base.joint(theta) + self.epsilon * self.alternative.joint(theta)

    def marginal(self, i, theta_i):
        return (1.0 - self.epsilon) * self.base.marginal(i, theta_i) + self.epsilon * self.alternative.marginal(i, theta_i)

    def conditional_lipschitz(self, i):
        # a mixture of FGM laws on one box is the FGM law with the mixed ρ
        if isinstance(self.base, FGMDensity) and isinstance(self.alternative, FGMDensity):
            rho = (1.0 - self.epsilon) * self.base.rho + self.epsilon * self.alternative.rho
            return FGMDensity(self.type_boxes, rho).conditional_lipschitz(i)
        if self.epsilon == 0.0:
            return self.base.conditional_lipschitz(i)
        if self.epsilon == 1.0:
            return self.alternative.conditional_lipschitz(i)
        return None

    def to_dict(self):
        return {"kind": self.kind.value, "epsilon": self.epsilon,
                "base": self.base.to_dict(), "alternative": self.alternative.to_dict()}


def _same_boxes(a: Sequence[BoxSpace], b: Sequence[BoxSpace]) -> bool:
    return len(a) == len(b) and all(
        np.allclose(x.lower, y.lower) and np.allclose(x.upper, y.upper) for x, y in zip(a, b)
    )


# =====================================
# GAME
# =====================================

@dataclass(frozen=True, eq=False)
class GameSpec:
    """An n-player Bayesian game. Immutable and safe to share across workers."""
    players: Tuple[PlayerSpec, ...]
    utility: UtilityModel
    density: DensityModel
    name: str = "game"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        players = tuple(self.players)
        if not players:
            raise ConfigError("A game needs at least one player", paths=["players"])
        object.__setattr__(self, "players", players)
        self.utility.validate_dims(players)
        if not _same_boxes([p.type_space for p in players], self.density.type_boxes):
            raise ConfigError("Density type spaces do not match the players' type boxes", paths=["density"])
        logger.debug(f"GameSpec '{self.name}' built: n={len(players)}, utility={self.utility.kind.value}, "
                     f"density={self.density.kind.value}")

    @property
    def n(self) -> int:
        return len(self.players)

    def rivals(self, i: int) -> List[int]:
        return [j for j in range(self.n) if j != i]

    def type_space(self, i: int) -> BoxSpace:
        return self.players[i].type_space

    def action_space(self, i: int) -> BoxSpace:
        return self.players[i].action_space

    def rival_type_box(self, i: int) -> Optional[BoxSpace]:
        return self.density.rival_box(i)

    def with_density(self, density: DensityModel, name: Optional[str] = None) -> "GameSpec":
        return replace(self, density=density, name=name or self.name)

    def reversed_actions(self, j: int) -> "GameSpec":
        """The same game with player j's action order reversed inside its box."""
        box = self.action_space(j)
        shift = box.lower + box.upper
        if isinstance(self.utility, QuadraticUtility):
            utility: UtilityModel = self.utility.reversed_for(j, shift)
        else:
            utility = ReversedUtility(self.utility, j, shift)
        return replace(self, utility=utility, name=f"{self.name} [player {j} reversed]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "players": [{"type_space": p.type_space.to_dict(), "action_space": p.action_space.to_dict()}
                        for p in self.players],
            "utility": self.utility.to_dict(),
            "density": self.density.to_dict(),
            "metadata": self.metadata,
        }


# =====================================
# EVALUATORS
# =====================================

def _profile(game: GameSpec, values: Sequence[Any], kind: str) -> List[np.ndarray]:
    if len(values) == game.n and all(np.ndim(v) == 0 for v in values):
        values = [[v] for v in values]
    if len(values) != game.n:
        raise ShapeError(f"{kind} profile has {len(values)} entries, game has {game.n} players")
    out = []
    for j, v in enumerate(values):
        box = game.action_space(j) if kind == "action" else game.type_space(j)
        out.append(box.check(v, label=f"{'a' if kind == 'action' else 'theta'}[{j}]"))
    return out


def evaluate_utility(game: GameSpec, i: int, a: Sequence[Any], theta: Sequence[Any]) -> float:
    """u_i(a_i, a_{-i}, θ) at a single point, with box checks."""
    actions = _profile(game, a, "action")
    types = _profile(game, theta, "type")
    return float(game.utility.value(i, actions, types))


def evaluate_grad(game: GameSpec, i: int, a: Sequence[Any], theta: Sequence[Any]) -> np.ndarray:
    """∇_{a_i}u_i at a single point; length z_i."""
    actions = _profile(game, a, "action")
    types = _profile(game, theta, "type")
    return np.asarray(game.utility.grad(i, actions, types), dtype=float).reshape(game.action_space(i).dim)


def conditional_density(game: GameSpec, i: int, theta_i: Any, theta_rest: Any) -> float:
    """q_i(θ_{-i} | θ_i) at a single point. No flooring is applied."""
    theta_i = game.type_space(i).check(theta_i, label=f"theta[{i}]")
    rival_box = game.rival_type_box(i)
    if rival_box is None:
        raise ShapeError("Single-player games have no rival types to condition on")
    theta_rest = rival_box.check(theta_rest, label="theta_rest")
    marg = float(game.density.marginal(i, theta_i))
    if marg <= 0.0:
        raise ConditioningError(f"Marginal q_{i}(theta_i) = {marg} at theta_i={theta_i.tolist()}")
    return float(game.density.joint(game.density.assemble(i, theta_i, theta_rest)) / marg)


# =====================================
# CHECK HELPERS (test oracles, never on the solve path)
# =====================================

def finite_difference_grad(game: GameSpec, i: int, actions: Sequence[np.ndarray], types: Sequence[np.ndarray],
                           h: float = FD_STEP) -> np.ndarray:
    """Central differences of u_i in a_i."""
    a_i = np.asarray(actions[i], dtype=float)
    out = np.empty(a_i.shape)
    for k in range(a_i.shape[-1]):
        step = np.zeros(a_i.shape[-1])
        step[k] = h
        plus = list(actions)
        minus = list(actions)
        plus[i] = a_i + step
        minus[i] = a_i - step
        out[..., k] = (game.utility.value(i, plus, types) - game.utility.value(i, minus, types)) / (2 * h)
    return out


def sample_profiles(game: GameSpec, rng: np.random.Generator, size: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    actions = [p.action_space.sample(rng, size) for p in game.players]
    types = [p.type_space.sample(rng, size) for p in game.players]
    return actions, types


def gradient_check(game: GameSpec, rng: np.random.Generator, samples: int = 1000,
                   rtol: float = 1e-6, h: float = FD_STEP) -> Dict[str, Any]:
    """Compare analytic gradients with central differences on random points, per player."""
    report: Dict[str, Any] = {"passed": True, "players": []}
    for i in range(game.n):
        actions, types = sample_profiles(game, rng, samples)
        # keep the FD stencil inside the box
        box = game.action_space(i)
        actions[i] = np.clip(actions[i], box.lower + h, box.upper - h)
        analytic = game.utility.grad(i, actions, types)
        numeric = finite_difference_grad(game, i, actions, types, h=h)
        scale = np.maximum(1.0, np.abs(analytic))
        rel = np.max(np.abs(analytic - numeric) / scale)
        ok = bool(rel <= rtol)
        report["players"].append({"player": i, "max_relative_error": float(rel), "passed": ok})
        report["passed"] = report["passed"] and ok
    return report


def monotonicity_quotients(game: GameSpec, i: int, rng: np.random.Generator, samples: int = 1000) -> np.ndarray:
    """(∇u_i(a') − ∇u_i(a''))·(a' − a'') / ‖a' − a''‖² over random a'_i, a''_i with shared a_{-i}, θ."""
    actions, types = sample_profiles(game, rng, samples)
    other = list(actions)
    other[i] = game.action_space(i).sample(rng, samples)
    diff = actions[i] - other[i]
    g1 = game.utility.grad(i, actions, types)
    g2 = game.utility.grad(i, other, types)
    denom = np.maximum(np.sum(diff * diff, axis=-1), 1e-300)
    return np.sum((g1 - g2) * diff, axis=-1) / denom
