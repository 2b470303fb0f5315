"""Comparison functions and the Legendre-Fenchel transform.

Every function here is vectorized: it accepts scalars or numpy arrays and
returns values of the same shape.  Class-K and class-K-infinity functions
live on ``s >= 0``; extended class-K functions live on the whole real line
and record how they are continued to negative arguments.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Scalar = Callable[[np.ndarray], np.ndarray]

#: absolute argument tolerance for numerical inversion of monotone maps
INVERSION_TOL = 1e-12


class ComparisonError(ValueError):
    """A comparison function violates its declared class."""


class InvalidParameterError(ValueError):
    pass


class DomainError(ValueError):
    pass


class IllPosedTransformError(ValueError):
    """The derivative of gamma cannot be inverted numerically."""


class FunctionClass(enum.Enum):
    EXTENDED_K = "EK"
    EXTENDED_K_INF = "EKinf"
    K = "K"
    K_INF = "Kinf"

    @property
    def extended(self) -> bool:
        return self in (FunctionClass.EXTENDED_K, FunctionClass.EXTENDED_K_INF)

    @property
    def unbounded(self) -> bool:
        return self in (FunctionClass.EXTENDED_K_INF, FunctionClass.K_INF)


def invert_monotone(fun: Scalar, y, lo: float = 0.0, tol: float = INVERSION_TOL,
                    max_doublings: int = 1100) -> np.ndarray:
    """Solve ``fun(s) = y`` for ``s >= lo`` with a strictly increasing ``fun``.

    The bracket starts at ``[lo, lo + 1]`` and its upper end doubles until
    it encloses every target, then plain bisection runs until the bracket
    is narrower than ``tol`` (or stops shrinking in floating point).
    """
    y = np.asarray(y, dtype=float)
    flat = np.atleast_1d(y).ravel()
    lo_arr = np.full(flat.shape, float(lo))
    hi_arr = lo_arr + 1.0
    for _ in range(max_doublings):
        short = fun(hi_arr) < flat
        if not np.any(short):
            break
        lo_arr = np.where(short, hi_arr, lo_arr)
        hi_arr = np.where(short, lo + 2.0 * (hi_arr - lo), hi_arr)
    else:
        raise IllPosedTransformError("could not bracket the inverse; function looks bounded")
    for _ in range(400):
        mid = 0.5 * (lo_arr + hi_arr)
        width = hi_arr - lo_arr
        if np.all((width <= tol) | (mid == lo_arr) | (mid == hi_arr)):
            break
        below = fun(mid) < flat
        lo_arr = np.where(below, mid, lo_arr)
        hi_arr = np.where(below, hi_arr, mid)
    out = 0.5 * (lo_arr + hi_arr)
    out = np.where(flat == fun(np.full(flat.shape, float(lo))), lo, out)
    return out.reshape(y.shape) if y.ndim else out[0]


@dataclass(frozen=True)
class ComparisonFunction:
    """A strictly increasing scalar map through the origin.

    ``deriv_inverse`` is the inverse of the derivative, needed only by the
    Legendre-Fenchel transform; ``negative_branch`` documents how extended
    functions continue to ``s < 0`` ("odd", "linear", or ``None`` for
    non-extended classes).
    """

    kind: FunctionClass
    eval: Scalar
    deriv: Optional[Scalar] = None
    inverse: Optional[Scalar] = None
    deriv_inverse: Optional[Scalar] = None
    name: str = "custom"
    negative_branch: Optional[str] = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, s):
        return self.eval(s)

    def inv(self, y):
        """Inverse map; analytic when available, bisection otherwise."""
        if self.inverse is not None:
            return self.inverse(y)
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            if not self.kind.extended:
                raise DomainError(f"{self.name}: inverse of a negative value outside class K range")
            neg = -invert_monotone(lambda s: -self.eval(-s), -np.minimum(y, 0.0))
            pos = invert_monotone(self.eval, np.maximum(y, 0.0))
            return np.where(y < 0, neg, pos)
        return invert_monotone(self.eval, y)

    def derivative(self, s, step: float = 1e-6):
        if self.deriv is not None:
            return self.deriv(s)
        s = np.asarray(s, dtype=float)
        hstep = step * np.maximum(1.0, np.abs(s))
        lo = s - hstep if self.kind.extended else np.maximum(s - hstep, 0.0)
        return (self.eval(s + hstep) - self.eval(lo)) / (s + hstep - lo)

    def check(self, samples=None, big: float = 1e6) -> None:
        """Validate the class invariants on ``samples``; raise on violation."""
        if samples is None:
            pos = np.geomspace(1e-4, 1e3, 60)
            samples = np.concatenate([-pos[::-1], [0.0], pos]) if self.kind.extended else np.concatenate([[0.0], pos])
        s = np.sort(np.asarray(samples, dtype=float))
        if float(self.eval(np.float64(0.0))) != 0.0:
            raise ComparisonError(f"{self.name}: value at 0 is {self.eval(0.0)!r}")
        with np.errstate(over="ignore"):
            vals = self.eval(s)
        keep = np.isfinite(vals)
        s, vals = s[keep], vals[keep]
        if not np.all(np.diff(vals) > 0):
            raise ComparisonError(f"{self.name}: not strictly increasing on samples")
        if self.kind.unbounded:
            # growth proxy: a saturating map barely moves between sqrt(big) and big
            with np.errstate(over="ignore"):
                top = float(self.eval(np.float64(big)))
            mid = float(self.eval(np.float64(np.sqrt(big))))
            if not (np.isposinf(top) or top > 1.5 * mid):
                raise ComparisonError(f"{self.name}: no unbounded growth detected")
        if self.deriv is not None:
            interior = s[np.abs(s) > 1e-3]
            hstep = 1e-6 * np.maximum(1.0, np.abs(interior))
            with np.errstate(over="ignore", invalid="ignore"):
                fd = (self.eval(interior + hstep) - self.eval(interior - hstep)) / (2 * hstep)
                an = self.deriv(interior)
            ok = np.isfinite(fd) & np.isfinite(an)
            if not np.allclose(an[ok], fd[ok], rtol=1e-6, atol=1e-9):
                raise ComparisonError(f"{self.name}: derivative disagrees with finite differences")


def make_linear_ek(slope: float) -> ComparisonFunction:
    """``s -> slope * s`` on the whole real line (extended class K-infinity)."""
    if not slope > 0:
        raise InvalidParameterError(f"slope must be positive, got {slope}")
    slope = float(slope)
    return ComparisonFunction(
        kind=FunctionClass.EXTENDED_K_INF,
        eval=lambda s: slope * np.asarray(s, dtype=float),
        deriv=lambda s: np.full(np.shape(s), slope),
        inverse=lambda y: np.asarray(y, dtype=float) / slope,
        name=f"linear({slope:g})",
        negative_branch="linear",
        params={"slope": slope},
    )


def make_linear_k(slope: float) -> ComparisonFunction:
    """``s -> slope * s`` restricted to ``s >= 0``; used as an ISSf gain."""
    base = make_linear_ek(slope)
    return ComparisonFunction(
        kind=FunctionClass.K_INF, eval=base.eval, deriv=base.deriv,
        inverse=base.inverse, name=f"klinear({slope:g})", params=base.params,
    )


def make_quadratic(c: float) -> ComparisonFunction:
    """``gamma(s) = c * s**2`` with ``gamma'(s) = 2 c s``."""
    if not c > 0:
        raise InvalidParameterError(f"coefficient must be positive, got {c}")
    c = float(c)
    return ComparisonFunction(
        kind=FunctionClass.K_INF,
        eval=lambda s: c * np.square(s),
        deriv=lambda s: 2.0 * c * np.asarray(s, dtype=float),
        inverse=lambda y: np.sqrt(np.asarray(y, dtype=float) / c),
        deriv_inverse=lambda r: np.asarray(r, dtype=float) / (2.0 * c),
        name=f"quadratic({c:g})",
        params={"c": c},
    )


def make_power(p: float, c: float = 1.0) -> ComparisonFunction:
    """``gamma(s) = c * s**p / p`` for ``p > 1``; its conjugate is a power too."""
    if not p > 1 or not c > 0:
        raise InvalidParameterError(f"need p > 1 and c > 0, got p={p}, c={c}")
    p, c = float(p), float(c)
    return ComparisonFunction(
        kind=FunctionClass.K_INF,
        eval=lambda s: c * np.power(s, p) / p,
        deriv=lambda s: c * np.power(s, p - 1.0),
        inverse=lambda y: np.power(p * np.asarray(y, dtype=float) / c, 1.0 / p),
        deriv_inverse=lambda r: np.power(np.asarray(r, dtype=float) / c, 1.0 / (p - 1.0)),
        name=f"power({p:g},{c:g})",
        params={"p": p, "c": c},
    )


def _cosh_m1(s):
    # 2 sinh^2(s/2) keeps precision near 0; overflows to inf past s ~ 1420
    with np.errstate(over="ignore"):
        return 2.0 * np.square(np.sinh(0.5 * np.asarray(s, dtype=float)))


def make_cosh() -> ComparisonFunction:
    """``gamma(s) = cosh(s) - 1``; derivative ``sinh`` is inverted by ``arcsinh``."""
    return ComparisonFunction(
        kind=FunctionClass.K_INF,
        eval=_cosh_m1,
        deriv=np.sinh,
        inverse=lambda y: np.arccosh(np.asarray(y, dtype=float) + 1.0),
        deriv_inverse=np.arcsinh,
        name="cosh",
    )


def make_quartic_sum() -> ComparisonFunction:
    """``gamma(s) = s**2/2 + s**4/4``: no closed-form ``(gamma')^-1``, so the
    transform falls back to bisection."""
    return ComparisonFunction(
        kind=FunctionClass.K_INF,
        eval=lambda s: 0.5 * np.square(s) + 0.25 * np.power(s, 4),
        deriv=lambda s: np.asarray(s, dtype=float) + np.power(s, 3),
        name="quartic_sum",
    )


BUILTIN_GAMMAS = {
    "quadratic_half": lambda: make_quadratic(0.5),
    "quadratic_one": lambda: make_quadratic(1.0),
    "power3": lambda: make_power(3.0),
    "cosh": make_cosh,
    "quartic_sum": make_quartic_sum,
}


def _check_derivative_class(gamma: ComparisonFunction) -> None:
    grid = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 40)])
    with np.errstate(over="ignore"):
        d = gamma.derivative(grid)
    # fast-growing derivatives may overflow at the far end of the grid
    d = d[~np.isposinf(d)]
    if len(d) < 10 or not np.all(np.isfinite(d)) or abs(float(d[0])) > 1e-6 or not np.all(np.diff(d[1:]) > 0):
        raise IllPosedTransformError(f"{gamma.name}: derivative is not sampled as class K-infinity")


@dataclass(frozen=True)
class LegendreFenchel:
    """The conjugate ``r -> integral_0^r (gamma')^-1(s) ds`` of a K-infinity gamma.

    Evaluated through ``r * p - gamma(p)`` with ``p = (gamma')^-1(r)``,
    which avoids quadrature error entirely.
    """

    base: ComparisonFunction
    numeric: bool = False

    def deriv_inverse(self, r):
        if self.base.deriv_inverse is not None and not self.numeric:
            return self.base.deriv_inverse(r)
        return invert_monotone(self.base.derivative, r)

    def transform(self, r):
        r_arr = np.asarray(r, dtype=float)
        if np.any(r_arr < 0):
            raise DomainError("Legendre-Fenchel transform is only defined for r >= 0")
        p = self.deriv_inverse(r_arr)
        return r_arr * p - self.base.eval(p)

    __call__ = transform

    def as_comparison(self) -> ComparisonFunction:
        """The transform itself as a K-infinity function (so it can be conjugated again)."""
        base = self.base
        return ComparisonFunction(
            kind=FunctionClass.K_INF,
            eval=self.transform,
            deriv=self.deriv_inverse,
            deriv_inverse=base.derivative,
            name=f"lf[{base.name}]",
        )


def lf_transform(gamma: ComparisonFunction, numeric: bool = False) -> LegendreFenchel:
    """Build the Legendre-Fenchel transform of ``gamma``.

    ``numeric=True`` forces the bisection path even when an analytic
    inverse of ``gamma'`` is known.
    """
    if gamma.kind.extended:
        raise IllPosedTransformError("the transform is defined for class K-infinity gamma only")
    _check_derivative_class(gamma)
    return LegendreFenchel(gamma, numeric=numeric or gamma.deriv_inverse is None)


def lf_scaled(gamma: ComparisonFunction, a: float, r):
    """``l(a*gamma)(r)`` computed as ``a * l(gamma)(r / a)``."""
    if not a > 0:
        raise InvalidParameterError(f"scale must be positive, got {a}")
    return a * lf_transform(gamma).transform(np.asarray(r, dtype=float) / a)


def scale(gamma: ComparisonFunction, a: float) -> ComparisonFunction:
    """``s -> a * gamma(s)`` as its own comparison function (no cached inverses
    of the derivative, so its transform is computed from scratch)."""
    if not a > 0:
        raise InvalidParameterError(f"scale must be positive, got {a}")
    return ComparisonFunction(
        kind=gamma.kind,
        eval=lambda s: a * gamma.eval(s),
        deriv=None if gamma.deriv is None else (lambda s: a * gamma.deriv(s)),
        name=f"{a:g}*{gamma.name}",
    )


def young_gap(gamma: ComparisonFunction, x, y) -> float:
    """``gamma(|x|) + l(gamma)(|y|) - x.y``; never negative up to roundoff."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    lf = lf_transform(gamma)
    return float(gamma.eval(np.linalg.norm(x)) + lf.transform(np.linalg.norm(y)) - x @ y)
