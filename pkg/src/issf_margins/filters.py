"""Safety-filter laws that override a nominal control.

Each law returns ``u = u0 + override`` with the override along
``(L_g2 h)^T``.  With ``r`` the scalar weight on that direction (the
rank-one ``R^-1``), the override is ``2 r (L_g2 h)^T`` for every law
except the plain CBF-QP, whose override is ``r (L_g2 h)^T``.

The functions below accept a single state ``(n,)`` or a batch ``(B, n)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .comparison import lf_transform
from .plant import BarrierCandidate, ControlAffinePlant, NumericError


class FilterKind(enum.Enum):
    CBF_QP = "cbf_qp"
    INVERSE_OPTIMAL = "inverse_optimal"
    SONTAG = "sontag"
    IMPROVED_ZERO_DIST = "improved_zero_dist"
    IMPROVED_ISSF = "improved_issf"


class FilterError(RuntimeError):
    """Base class; carries the offending state when known."""

    def __init__(self, message: str, x=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x)


class InfeasibleFilterError(FilterError):
    """``L_g2 h = 0`` where the constraint needs a correction."""


class DegenerateAugmentationError(FilterError):
    """``L_g2 h = 0`` where the gain-margin augmentation is positive."""


class InvalidRError(FilterError):
    """User-supplied ``R^-1`` is not positive semidefinite."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind
    barrier: BarrierCandidate
    uses_gamma: bool = False
    r_inv: Optional[Callable] = None

    def __post_init__(self):
        if self.kind is FilterKind.IMPROVED_ISSF and self.barrier.gamma is None:
            raise ConfigurationError("improved ISSf filter needs gamma on the barrier")
        if self.uses_gamma and self.barrier.gamma is None:
            raise ConfigurationError("uses_gamma=True needs gamma on the barrier")
        if self.kind is FilterKind.SONTAG and self.barrier.rho is None:
            raise ConfigurationError("Sontag filter needs rho on the barrier")
        if self.r_inv is not None and self.kind is not FilterKind.INVERSE_OPTIMAL:
            raise ConfigurationError("a user-supplied R^-1 is supported for the inverse-optimal law only")
        lf = lf_transform(self.barrier.gamma) if self.attenuates else None
        object.__setattr__(self, "_lf", lf)

    @property
    def attenuates(self) -> bool:
        """Whether the ``l_gamma(2|L_g1 h|)`` term enters the constraint."""
        if self.kind is FilterKind.IMPROVED_ISSF:
            return True
        if self.kind is FilterKind.IMPROVED_ZERO_DIST:
            return False
        return self.uses_gamma


@dataclass
class FilterOutput:
    u_total: np.ndarray
    override: np.ndarray
    omega: np.ndarray
    r_inv: np.ndarray
    r_inv_quadratic: np.ndarray
    degenerate: np.ndarray


@dataclass
class FilterTerms:
    """Everything a filter evaluation computes, without raising on faults."""

    output: FilterOutput
    h: np.ndarray
    Lf: np.ndarray
    Lg1: np.ndarray  # zero-width unless the law uses it
    Lg2: np.ndarray
    lg2u0: np.ndarray
    attenuation: np.ndarray
    fault: np.ndarray
    fault_kind: Optional[type]


def attenuation(barrier: BarrierCandidate, Lg1: np.ndarray, lf=None) -> np.ndarray:
    """``l_gamma(2 |L_g1 h|)``."""
    lf = lf_transform(barrier.gamma) if lf is None else lf
    return lf.transform(2.0 * np.linalg.norm(Lg1, axis=-1))


def compute_terms(spec: FilterSpec, plant: ControlAffinePlant, x, u0,
                  fx=None, g1x=None, g2x=None) -> FilterTerms:
    """Vectorized core shared by all laws, the simulator and the certifier.

    ``fx``, ``g1x`` and ``g2x`` may be passed in when the caller already
    evaluated the plant at ``x``.
    """
    x = np.asarray(x, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    barrier = spec.barrier
    hx = barrier.h(x)
    dh = barrier.gradient(x)
    fx = plant.f(x) if fx is None else fx
    g2x = plant.g2(x) if g2x is None else g2x
    kind = spec.kind
    # L_g1 h only enters through attenuation and the Sontag law
    needs_lg1 = spec.attenuates or kind is FilterKind.SONTAG
    if plant.dist_dim and needs_lg1:
        g1x = plant.g1(x) if g1x is None else g1x
        Lg1 = np.matmul(dh[..., None, :], g1x)[..., 0, :]
    else:
        Lg1 = np.zeros(x.shape[:-1] + (0,))
    Lf = (dh * fx).sum(-1)
    a = np.matmul(dh[..., None, :], g2x)[..., 0, :]
    b = (a * a).sum(-1)
    lg2u0 = (a * u0).sum(-1)
    alpha_h = barrier.alpha.eval(hx)
    degenerate = b == 0.0
    any_degenerate = bool(degenerate.any())
    safe_b = np.where(degenerate, 1.0, b) if any_degenerate else b
    fault_kind = None

    att = attenuation(barrier, Lg1, spec._lf) if spec.attenuates else 0.0

    if kind is FilterKind.SONTAG:
        v = np.maximum(0.0, -hx)
        omega = Lf + lg2u0 - np.linalg.norm(Lg1, axis=-1) * barrier.rho.inv(v) + alpha_h
        root = np.hypot(omega, b)
        # -omega + sqrt(omega^2 + b^2) without cancellation for omega >> b
        pos = omega > 0
        num = np.where(pos, b * b / np.where(pos, omega + root, 1.0), root - omega)
        r = 0.5 * num / safe_b
        fault = np.zeros(np.shape(omega), dtype=bool)
    else:
        omega = Lf + lg2u0 - att + alpha_h
        need = np.maximum(0.0, -omega)
        r = need / safe_b
        fault = degenerate & (need > 0)
        if any_degenerate and fault.any():
            fault_kind = InfeasibleFilterError
        if kind is FilterKind.INVERSE_OPTIMAL and spec.r_inv is not None:
            att = np.broadcast_to(att, np.shape(Lf))
            return _user_r_terms(spec, x, u0, a, b, omega, hx, Lf, Lg1, lg2u0, att, degenerate)
        if kind in (FilterKind.IMPROVED_ZERO_DIST, FilterKind.IMPROVED_ISSF):
            aug = np.maximum(Lf, 0.0) + np.maximum(lg2u0, 0.0)
            r = r + aug / safe_b
            if any_degenerate:
                aug_fault = degenerate & (aug > 0)
                if aug_fault.any() and fault_kind is None:
                    fault_kind = DegenerateAugmentationError
                fault = fault | aug_fault
    if any_degenerate:
        r = np.where(degenerate, 0.0, r)
    att = np.broadcast_to(att, np.shape(Lf))

    gain = 1.0 if kind is FilterKind.CBF_QP else 2.0
    override = (gain * r)[..., None] * a
    out = FilterOutput(
        u_total=u0 + override,
        override=override,
        omega=omega,
        r_inv=r,
        r_inv_quadratic=r * b,
        degenerate=degenerate,
    )
    return FilterTerms(out, hx, Lf, Lg1, a, lg2u0, att, fault, fault_kind)


def _user_r_terms(spec, x, u0, a, b, omega, hx, Lf, Lg1, lg2u0, att, degenerate):
    r_user = np.asarray(spec.r_inv(x, u0), dtype=float)
    m = a.shape[-1]
    if r_user.shape[-2:] == (m, m):
        sym = 0.5 * (r_user + np.swapaxes(r_user, -1, -2))
        if np.any(np.linalg.eigvalsh(sym) < -1e-12):
            raise InvalidRError("R^-1 has a negative eigenvalue", x)
        direction = np.matmul(r_user, a[..., None])[..., 0]
        quad = np.sum(a * direction, axis=-1)
        # scalar weight reported as the quadratic form over |L_g2 h|^2
        r = np.where(degenerate, 0.0, quad / np.where(degenerate, 1.0, b))
    else:
        r_user = np.broadcast_to(r_user, np.shape(omega))
        if np.any(r_user < 0):
            raise InvalidRError("scalar R^-1 is negative", x)
        direction = r_user[..., None] * a
        quad = r_user * b
        r = r_user
    override = 2.0 * direction
    out = FilterOutput(u0 + override, override, omega, r, quad, degenerate)
    fault = np.zeros(np.shape(omega), dtype=bool)
    return FilterTerms(out, hx, Lf, Lg1, a, lg2u0, att, fault, None)


def evaluate(spec: FilterSpec, plant: ControlAffinePlant, x, u0) -> FilterOutput:
    """Evaluate a filter, raising on infeasible or degenerate points."""
    terms = compute_terms(spec, plant, x, u0)
    if np.any(terms.fault):
        bad = np.asarray(x)[terms.fault] if np.ndim(terms.fault) else np.asarray(x)
        raise terms.fault_kind(
            f"{spec.kind.value}: L_g2 h = 0 where a correction is required", bad
        )
    if not np.all(np.isfinite(terms.output.u_total)):
        raise NumericError(f"{spec.kind.value}: non-finite control", x)
    return terms.output


def cbf_qp(plant: ControlAffinePlant, barrier: BarrierCandidate, x, u0,
           uses_gamma: bool = False) -> FilterOutput:
    """Minimum-norm correction meeting ``L_f h - l_gamma + L_g2 h u >= -alpha(h)``."""
    return evaluate(FilterSpec(FilterKind.CBF_QP, barrier, uses_gamma), plant, x, u0)


def inverse_optimal(plant: ControlAffinePlant, barrier: BarrierCandidate, x, u0,
                    r_inv: Optional[Union[Callable, float, np.ndarray]] = None,
                    uses_gamma: bool = False) -> FilterOutput:
    """``u0 + 2 R^-1 (L_g2 h)^T``.

    ``r_inv`` defaults to the CBF-QP weight, making the override exactly
    twice the QP correction.  A float, an ``(m2, m2)`` matrix, or a
    callable ``(x, u0) -> either`` may be supplied instead.
    """
    if r_inv is not None and not callable(r_inv):
        const = np.asarray(r_inv, dtype=float)
        r_inv = lambda x_, u_: const  # noqa: E731
    spec = FilterSpec(FilterKind.INVERSE_OPTIMAL, barrier, uses_gamma, r_inv)
    return evaluate(spec, plant, x, u0)


def sontag(plant: ControlAffinePlant, barrier: BarrierCandidate, x, u0) -> FilterOutput:
    """Universal-formula override
    ``kappa = (-omega + sqrt(omega^2 + |L_g2 h|^4)) / |L_g2 h|^2``."""
    return evaluate(FilterSpec(FilterKind.SONTAG, barrier), plant, x, u0)


def improved_r_inv(plant: ControlAffinePlant, barrier: BarrierCandidate, x, u0, r_inv):
    """Augmented weight
    ``r_inv + (max(L_f h, 0) + max(L_g2 h u0, 0)) / |L_g2 h|^2``."""
    x = np.asarray(x, dtype=float)
    lie_Lf = np.sum(barrier.gradient(x) * plant.f(x), axis=-1)
    a = np.matmul(barrier.gradient(x)[..., None, :], plant.g2(x))[..., 0, :]
    b = np.sum(a * a, axis=-1)
    aug = np.maximum(lie_Lf, 0.0) + np.maximum(np.sum(a * np.asarray(u0, dtype=float), axis=-1), 0.0)
    degenerate = b == 0.0
    if np.any(degenerate & (aug > 0)):
        raise DegenerateAugmentationError("augmentation needed where L_g2 h = 0", x)
    out = np.asarray(r_inv, dtype=float) + np.where(degenerate, 0.0, aug / np.where(degenerate, 1.0, b))
    return float(out) if out.ndim == 0 else out


def improved_filter(plant: ControlAffinePlant, barrier: BarrierCandidate, x, u0,
                    variant: str = "zero_dist") -> FilterOutput:
    """Gain-margin-improved override; ``variant`` is ``"zero_dist"`` or ``"issf"``."""
    kinds = {"zero_dist": FilterKind.IMPROVED_ZERO_DIST, "issf": FilterKind.IMPROVED_ISSF}
    if variant not in kinds:
        raise ConfigurationError(f"unknown variant {variant!r}")
    return evaluate(FilterSpec(kinds[variant], barrier), plant, x, u0)
