"""Control-affine plants, barrier candidates and boundary classification.

All vector fields broadcast over leading axes: a state array of shape
``(..., n)`` maps to ``f -> (..., n)``, ``g1 -> (..., n, m1)``,
``g2 -> (..., n, m2)``, ``h -> (...)`` and ``grad_h -> (..., n)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .comparison import ComparisonFunction

FD_STEP = 1e-6
CLASSIFICATION_TOL = 1e-9


class NumericError(ArithmeticError):
    """Non-finite value produced while evaluating a plant or barrier."""

    def __init__(self, message: str, x=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x)


class BoundaryNotFoundError(RuntimeError):
    pass


class InvalidInputError(ValueError):
    pass


@dataclass(frozen=True)
class ControlAffinePlant:
    """``xdot = f(x) + g1(x) w + g2(x) u``."""

    state_dim: int
    dist_dim: int
    ctrl_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    g1: Optional[Callable[[np.ndarray], np.ndarray]]
    g2: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __post_init__(self):
        if self.state_dim < 1 or self.ctrl_dim < 1 or self.dist_dim < 0:
            raise InvalidInputError("dimensions must satisfy n >= 1, m2 >= 1, m1 >= 0")
        if self.dist_dim > 0 and self.g1 is None:
            raise InvalidInputError("g1 is required when dist_dim > 0")

    def disturbance_matrix(self, x: np.ndarray) -> np.ndarray:
        if self.dist_dim == 0:
            return np.zeros(x.shape + (0,))
        return self.g1(x)

    def lipschitz_estimate(self, box: "Box", n_pairs: int = 200, seed: int = 0) -> float:
        """Largest sampled ``|f(x)-f(y)| / |x-y|`` over pairs in ``box``."""
        rng = np.random.default_rng(seed)
        a = box.sample(n_pairs, rng)
        b = box.sample(n_pairs, rng)
        num = np.linalg.norm(self.f(a) - self.f(b), axis=-1)
        den = np.linalg.norm(a - b, axis=-1)
        keep = den > 0
        return float(np.max(num[keep] / den[keep])) if np.any(keep) else 0.0


@dataclass(frozen=True)
class BarrierCandidate:
    """Barrier ``h`` with safe set ``{h >= 0}`` and its comparison functions.

    ``set_distance`` (optional) returns the exact point-to-set distance to
    the safe set; without it violation metrics fall back to ``-min(0, h)``.
    """

    h: Callable[[np.ndarray], np.ndarray]
    grad_h: Optional[Callable[[np.ndarray], np.ndarray]]
    alpha: ComparisonFunction
    gamma: Optional[ComparisonFunction] = None
    rho: Optional[ComparisonFunction] = None
    set_distance: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    @property
    def uses_fd_gradient(self) -> bool:
        return self.grad_h is None

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.grad_h is not None:
            return self.grad_h(x)
        return fd_gradient(self.h, x)

    def distance(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        """Distance to the safe set and whether it is exact."""
        if self.set_distance is not None:
            return self.set_distance(x), True
        return np.maximum(0.0, -self.h(x)), False

    def check_gradient(self, samples: np.ndarray) -> float:
        """Worst normalized gap between ``grad_h`` and central differences."""
        samples = np.atleast_2d(samples)
        an = self.gradient(samples)
        fd = fd_gradient(self.h, samples)
        gap = np.abs(an - fd) / np.maximum(1e-5, 1e-4 * np.abs(fd))
        return float(np.max(gap))

    def check_sign_structure(self, interior=(), boundary=(), exterior=(), tol: float = 1e-9) -> bool:
        ok = True
        if len(interior):
            ok &= bool(np.all(self.h(np.atleast_2d(interior)) >= 0))
        if len(boundary):
            ok &= bool(np.all(np.abs(self.h(np.atleast_2d(boundary))) <= tol))
        if len(exterior):
            ok &= bool(np.all(self.h(np.atleast_2d(exterior)) < 0))
        return ok


def fd_gradient(h: Callable, x: np.ndarray) -> np.ndarray:
    """Central differences with step ``1e-6 * max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    step = FD_STEP * np.maximum(1.0, np.linalg.norm(x, axis=-1, keepdims=True))
    grad = np.empty_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = 1.0
        grad[..., i] = (h(x + step * e) - h(x - step * e)) / (2 * step[..., 0])
    return grad


@dataclass(frozen=True)
class Box:
    """Axis-aligned working region ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidInputError("box must be non-empty with matching bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((n, self.dim))

    def low_discrepancy(self, n: int, seed: int = 0) -> np.ndarray:
        """Scrambled Halton points, deterministic per seed."""
        pts = qmc.Halton(d=self.dim, scramble=True, seed=seed).random(n)
        return self.lower + (self.upper - self.lower) * pts

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)


class LieDerivatives(NamedTuple):
    Lf: np.ndarray
    Lg1: np.ndarray
    Lg2: np.ndarray


def lie_derivatives(plant: ControlAffinePlant, barrier: BarrierCandidate, x) -> LieDerivatives:
    """``(grad h . f, grad h . g1, grad h . g2)`` at ``x`` (batched over leading axes)."""
    x = np.asarray(x, dtype=float)
    dh = barrier.gradient(x)
    Lf = np.sum(dh * plant.f(x), axis=-1)
    Lg1 = np.matmul(dh[..., None, :], plant.disturbance_matrix(x))[..., 0, :]
    Lg2 = np.matmul(dh[..., None, :], plant.g2(x))[..., 0, :]
    if not (np.all(np.isfinite(Lf)) and np.all(np.isfinite(Lg1)) and np.all(np.isfinite(Lg2))):
        raise NumericError("non-finite Lie derivative", x)
    return LieDerivatives(Lf, Lg1, Lg2)


def sample_boundary(barrier: BarrierCandidate, box: Box, n_samples: int, seed: int = 0,
                    tol: float = 1e-9) -> np.ndarray:
    """Boundary points found by bisection along random chords of ``box``.

    A chord is kept when its endpoints have opposite signs of ``h``; the
    root is refined until ``|h| <= tol``.
    """
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    found: list[np.ndarray] = []
    h_lo, h_hi = np.inf, -np.inf
    for _ in range(10 * n_samples):
        a, b = box.sample(2, rng)
        ha, hb = float(barrier.h(a)), float(barrier.h(b))
        h_lo, h_hi = min(h_lo, ha, hb), max(h_hi, ha, hb)
        if ha == 0.0:
            found.append(a)
        elif hb == 0.0:
            found.append(b)
        elif (ha > 0) != (hb > 0):
            root = _chord_root(barrier.h, a, b, ha, tol)
            if root is not None:
                found.append(root)
        if len(found) == n_samples:
            return np.array(found)
    raise BoundaryNotFoundError(
        f"found {len(found)}/{n_samples} boundary points; h ranged over [{h_lo:.3g}, {h_hi:.3g}]"
    )


def _chord_root(h, a, b, ha, tol):
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        x = a + mid * (b - a)
        hm = float(h(x))
        if abs(hm) <= tol:
            return x
        if (hm > 0) == (ha > 0):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-17:
            break
    return None


class Verdict(enum.Enum):
    ACTS_SAFELY = "acts_safely"
    ACTS_UNSAFELY = "acts_unsafely"
    MIXED = "mixed"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class BoundaryClassification:
    f_verdict: Verdict
    u0_verdict: Verdict
    f_margins: tuple[float, float]
    u0_margins: tuple[float, float]
    samples: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "f_verdict": self.f_verdict.value,
            "u0_verdict": self.u0_verdict.value,
            "f_margins": list(self.f_margins),
            "u0_margins": list(self.u0_margins),
            "n_samples": int(len(self.samples)),
        }


def _sign_verdict(values: np.ndarray, tol: float) -> Verdict:
    if np.all(values > tol):
        return Verdict.ACTS_SAFELY
    if np.all(values < -tol):
        return Verdict.ACTS_UNSAFELY
    return Verdict.MIXED


def classify_boundary(plant: ControlAffinePlant, barrier: BarrierCandidate, u0: Callable,
                      samples, tol: float = CLASSIFICATION_TOL) -> BoundaryClassification:
    """Sign pattern of ``L_f h`` and ``L_g2 h . u0`` over boundary samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0 or samples.size == 0:
        raise InvalidInputError("no boundary samples given")
    if np.any(np.abs(barrier.h(samples)) > 1e-6):
        raise InvalidInputError("samples must lie on the boundary (|h| <= 1e-6)")
    lie = lie_derivatives(plant, barrier, samples)
    lg2u0 = np.sum(lie.Lg2 * u0(samples), axis=-1)
    f_verdict = _sign_verdict(lie.Lf, tol)
    if np.any(np.linalg.norm(lie.Lg2, axis=-1) < tol):
        u0_verdict = Verdict.DEGENERATE
    else:
        u0_verdict = _sign_verdict(lg2u0, tol)
    return BoundaryClassification(
        f_verdict=f_verdict,
        u0_verdict=u0_verdict,
        f_margins=(float(np.min(lie.Lf)), float(np.max(lie.Lf))),
        u0_margins=(float(np.min(lg2u0)), float(np.max(lg2u0))),
        samples=samples,
    )


INF = float("inf")


def guaranteed_margin(classification: BoundaryClassification, filter_kind) -> Optional[tuple[float, float]]:
    """Gain-margin interval the theory guarantees for this boundary pattern.

    Returns ``None`` when the pattern is not covered (mixed or degenerate
    boundary behaviour).  The upper end is ``inf`` for unbounded margins.
    """
    from .filters import FilterKind

    if filter_kind in (FilterKind.IMPROVED_ZERO_DIST, FilterKind.IMPROVED_ISSF):
        return (0.5, INF)
    f, u = classification.f_verdict, classification.u0_verdict
    if filter_kind is FilterKind.CBF_QP:
        if f is Verdict.ACTS_UNSAFELY:
            return (1.0, INF)
        if f is Verdict.ACTS_SAFELY and u is Verdict.ACTS_UNSAFELY:
            return (0.5, 1.0)
        return None
    if filter_kind is FilterKind.INVERSE_OPTIMAL:
        if f is Verdict.ACTS_UNSAFELY and u is Verdict.ACTS_UNSAFELY:
            return (0.5, INF)
        if f is Verdict.ACTS_UNSAFELY and u is Verdict.ACTS_SAFELY:
            return (1.0, INF)
        if f is Verdict.ACTS_SAFELY and u is Verdict.ACTS_UNSAFELY:
            return (0.5, 1.0)
    return None


def as_states(points: Sequence, dim: int) -> np.ndarray:
    """Coerce a list of scalars or vectors into an ``(N, dim)`` array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and dim == 1:
        arr = arr[:, None]
    return np.atleast_2d(arr).reshape(-1, dim)
