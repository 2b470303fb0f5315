"""Numerical certificates: HJI residuals, barrier conditions, realized costs.

Every filter ``u = u0 + 2 R^-1 (L_g2 h)^T`` with ``R^-1 = r I`` pairs
with a running penalty ``l(x, u0)`` that makes

    L_{f+g2 u0} h - (lam/2) l_gamma(2|L_g1 h|) + L_g2 h R^-1 (L_g2 h)^T + l / 4 = 0

hold identically, and maximizes the cost

    J = 4 h(x(T)) + int l - (u-u0)^T R (u-u0) + 2 lam gamma(|w| / lam) dt.

The penalty is built here from Lie derivatives in closed form, separately
from the filter code, so the residual is a genuine cross-check of the two.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .comparison import ComparisonFunction, lf_transform
from .filters import ConfigurationError, FilterKind, FilterSpec, FilterTerms, compute_terms
from .plant import BarrierCandidate, Box, ControlAffinePlant, InvalidInputError, as_states
from .sim import DEFAULT_DT, DEFAULT_ESCAPE, DisturbanceSignal, EscapeWarning, simulate_batch

IDENTITY_TOL = 1e-9
INEQUALITY_TOL = 1e-9
GUARD_BAND = 1e-12


class InvalidRegionError(InvalidInputError):
    """The sampling box misses a region the check needs."""


class CheckMode(enum.Enum):
    EQUALITY = "equality"
    INEQUALITY = "inequality"


class Condition(enum.Enum):
    DISSIPATION = "dissipation"      # grad h . F >= -alpha(h) - rho(|w|)
    MAGNITUDE = "magnitude"          # |h| >= rho(|w|)  =>  grad h . F >= -alpha(h)
    EXTERIOR = "exterior"            # min(0, h) <= -rho(|w|)  =>  grad h . F >= -alpha(h)


@dataclass
class CertReport:
    """Outcome of one quantified check.

    For ``EQUALITY`` checks ``worst_residual`` is the largest ``|residual|``;
    for ``INEQUALITY`` checks it is the smallest margin (negative means
    violated).
    """

    check_name: str
    n_points: int
    worst_residual: float
    worst_point: Optional[list]
    passed: bool
    mode: CheckMode = CheckMode.INEQUALITY
    tolerance: float = INEQUALITY_TOL
    details: dict = field(default_factory=dict)

    @staticmethod
    def verdict(worst: float, mode: CheckMode, tol: float) -> bool:
        if not np.isfinite(worst):
            return mode is CheckMode.INEQUALITY and worst > 0
        return abs(worst) <= tol if mode is CheckMode.EQUALITY else worst >= -tol

    def to_dict(self) -> dict:
        return {
            "check_name": self.check_name,
            "n_points": int(self.n_points),
            "worst_residual": _json_float(self.worst_residual),
            "worst_point": self.worst_point,
            "passed": bool(self.passed),
            "mode": self.mode.value,
            "tolerance": self.tolerance,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CertReport":
        return cls(d["check_name"], d["n_points"], float(d["worst_residual"]), d["worst_point"],
                   d["passed"], CheckMode(d.get("mode", "inequality")), d.get("tolerance", INEQUALITY_TOL),
                   d.get("details", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _json_float(v):
    v = float(v)
    return v if np.isfinite(v) else repr(v)


def _report(name, values, points, mode, tol, extra_cols=None, **details) -> CertReport:
    values = np.asarray(values, dtype=float)
    keep = ~np.isnan(values)
    n = int(np.count_nonzero(keep))
    if n == 0:
        return CertReport(name, 0, float("nan"), None, False, mode, tol, details)
    vals = values[keep]
    pts = np.asarray(points)[keep]
    j = int(np.argmax(np.abs(vals))) if mode is CheckMode.EQUALITY else int(np.argmin(vals))
    worst = float(vals[j])
    wp = np.atleast_1d(pts[j]).tolist()
    if extra_cols is not None:
        wp = {"x": wp, "w": np.atleast_1d(np.asarray(extra_cols)[keep][j]).tolist()}
    return CertReport(name, n, worst, wp, CertReport.verdict(worst, mode, tol), mode, tol, details)


# ---------------------------------------------------------------- sampling


def sample_points(box: Box, n: int, seed: int = 0) -> np.ndarray:
    """``n`` uniform points followed by ``n`` scrambled Halton points."""
    rng = np.random.default_rng(seed)
    return np.vstack([box.sample(n, rng), box.low_discrepancy(n, seed)])


def sample_region(box: Box, barrier: BarrierCandidate, n: int, region: str, seed: int = 0,
                  max_rounds: int = 50) -> np.ndarray:
    """``n`` points of the box with ``h > 0`` (``"interior"``) or ``h < 0``."""
    pick = (lambda h: h > 0) if region == "interior" else (lambda h: h < 0)
    got, total = [], 0
    for k in range(max_rounds):
        cand = sample_points(box, max(n, 64), seed + k)
        sel = cand[pick(barrier.h(cand))]
        got.append(sel)
        total += len(sel)
        if total >= n:
            return np.vstack(got)[:n]
    if total == 0:
        raise InvalidRegionError(f"box does not intersect the {region} of the safe set")
    return np.vstack(got)


# ---------------------------------------------------------------- penalty and HJI


def _u0_values(u0, x):
    return u0(x) if callable(u0) else np.broadcast_to(np.asarray(u0, dtype=float), x.shape[:-1] + (np.shape(u0)[-1],))


def penalty_from_terms(kind: FilterKind, terms: FilterTerms, lam: float = 2.0,
                       alpha_h=None) -> np.ndarray:
    """Running penalty ``l(x, u0)`` of a filter, from its Lie-derivative terms."""
    L = terms.Lf + terms.lg2u0
    att = terms.attenuation
    b = np.sum(terms.Lg2 * terms.Lg2, axis=-1)
    omega = terms.output.omega
    if kind is FilterKind.SONTAG:
        q = 0.5 * (np.sqrt(omega * omega + b * b) - omega)
    else:
        q = np.maximum(0.0, -omega)
        if kind is FilterKind.CBF_QP:
            q = 0.5 * q
    l = -4.0 * (L + q) + 2.0 * lam * att
    if kind in (FilterKind.IMPROVED_ZERO_DIST, FilterKind.IMPROVED_ISSF):
        l = l - 4.0 * np.maximum(terms.Lf, 0.0) - 4.0 * np.maximum(terms.lg2u0, 0.0)
    return l


def penalty_function(plant: ControlAffinePlant, barrier: BarrierCandidate, x, u0,
                     filter_kind: FilterKind, lam: float = 2.0, uses_gamma: bool = False) -> np.ndarray:
    """``l(x, u0)`` for the given filter; ``u0`` is a callable or values."""
    x = np.asarray(x, dtype=float)
    spec = FilterSpec(filter_kind, barrier, uses_gamma)
    terms = compute_terms(spec, plant, x, _u0_values(u0, x))
    return penalty_from_terms(filter_kind, terms, lam)


def control_weight(kind: FilterKind, terms: FilterTerms) -> np.ndarray:
    """Scalar ``r`` with ``R^-1 = r I`` so that the override is ``2 R^-1 (L_g2 h)^T``."""
    r = terms.output.r_inv
    return 0.5 * r if kind is FilterKind.CBF_QP else r


def hji_residual(plant: ControlAffinePlant, barrier: BarrierCandidate, x, u0,
                 filter_kind: FilterKind, lam: float = 2.0, uses_gamma: bool = False):
    """Left-hand side of the HJI equation at ``x``.

    Points where ``L_g2 h = 0`` are skipped: ``None`` for a single state,
    ``nan`` entries for a batch.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    spec = FilterSpec(filter_kind, barrier, uses_gamma)
    terms = compute_terms(spec, plant, xb, _u0_values(u0, xb))
    l = penalty_from_terms(filter_kind, terms, lam)
    quad = 0.5 * np.sum(terms.Lg2 * terms.output.override, axis=-1)
    res = terms.Lf + terms.lg2u0 - 0.5 * lam * terms.attenuation + quad + 0.25 * l
    res = np.where(terms.output.degenerate, np.nan, res)
    if single:
        return None if np.isnan(res[0]) else float(res[0])
    return res


def hji_check(plant, barrier, u0, filter_kind, box: Box, n: int = 1000, seed: int = 0,
              lam: float = 2.0, uses_gamma: bool = False) -> CertReport:
    """HJI residual over ``n`` scrambled Halton points of ``box``."""
    pts = box.low_discrepancy(n, seed)
    res = hji_residual(plant, barrier, pts, u0, filter_kind, lam, uses_gamma)
    return _report(f"hji[{filter_kind.value}]", res, pts, CheckMode.EQUALITY, IDENTITY_TOL,
                   skipped=int(np.count_nonzero(np.isnan(res))))


def penalty_sign_check(plant: ControlAffinePlant, barrier: BarrierCandidate, u0, filter_kind: FilterKind,
                       box: Box, n: int, seed: int = 0, lam: float = 2.0,
                       uses_gamma: bool = False) -> CertReport:
    """``l > 0`` inside, ``l < 0`` outside, and ``l <= 4 alpha(h)`` everywhere.

    The worst residual is the smallest of the three margins.
    """
    inside = sample_region(box, barrier, n, "interior", seed)
    outside = sample_region(box, barrier, n, "exterior", seed + 1000)
    pts = np.vstack([inside, outside])
    l = penalty_function(plant, barrier, pts, u0, filter_kind, lam, uses_gamma)
    h = barrier.h(pts)
    sign = np.where(h > 0, l, -l)
    bound = 4.0 * barrier.alpha.eval(h) - l
    margin = np.minimum(sign, bound)
    rep = _report(f"penalty_sign[{filter_kind.value}]", margin, pts, CheckMode.INEQUALITY, INEQUALITY_TOL,
                  min_interior_l=float(np.min(l[: len(inside)])),
                  max_exterior_l=float(np.max(l[len(inside):])),
                  min_bound_margin=float(np.min(bound)))
    return rep


def _closed_loop_rate(plant, barrier, closed_loop_u, x, w, sigma):
    dh = barrier.gradient(x)
    u = np.asarray(closed_loop_u(x), dtype=float).reshape(x.shape[0], plant.ctrl_dim)
    F = plant.f(x) + sigma * np.einsum("bij,bj->bi", plant.g2(x), u)
    if w is not None and plant.dist_dim:
        F = F + np.einsum("bij,bj->bi", plant.g1(x), w)
    return np.sum(dh * F, axis=-1)


def zbf_check(plant: ControlAffinePlant, barrier: BarrierCandidate, closed_loop_u: Callable,
              box: Box, n: int, seed: int = 0, sigma: float = 1.0) -> CertReport:
    """``grad h . (f + sigma g2 u) + alpha(h) >= 0`` with ``w = 0``."""
    pts = sample_points(box, n, seed)
    margin = _closed_loop_rate(plant, barrier, closed_loop_u, pts, None, sigma) + barrier.alpha.eval(barrier.h(pts))
    return _report("zbf", margin, pts, CheckMode.INEQUALITY, INEQUALITY_TOL, sigma=sigma)


def issf_bf_check(plant: ControlAffinePlant, barrier: BarrierCandidate, closed_loop_u: Callable,
                  box: Box, w_grid, condition: Condition = Condition.DISSIPATION, n: int = 500,
                  seed: int = 0, sigma: float = 1.0, alpha: Optional[ComparisonFunction] = None,
                  rho: Optional[ComparisonFunction] = None, cross_check: bool = False) -> CertReport:
    """Disturbance-aware barrier condition over ``box x w_grid``.

    Implications are vacuous where the antecedent fails; the antecedent is
    evaluated inclusively with a ``1e-12`` guard band.  ``alpha`` and
    ``rho`` default to the barrier's.  With ``cross_check`` all three
    conditions run and ``details`` records each verdict and whether a pass
    of the dissipation form was accompanied by passes of the other two.
    """
    rho = rho if rho is not None else barrier.rho
    if rho is None:
        raise ConfigurationError("issf_bf_check needs rho")
    alpha = alpha if alpha is not None else barrier.alpha
    if cross_check:
        reps = {c: issf_bf_check(plant, barrier, closed_loop_u, box, w_grid, c, n, seed, sigma, alpha, rho)
                for c in Condition}
        d = reps[Condition.DISSIPATION].passed
        follows = (not d) or (reps[Condition.MAGNITUDE].passed and reps[Condition.EXTERIOR].passed)
        worst = min(r.worst_residual for r in reps.values())
        base = reps[Condition.DISSIPATION]
        details = {c.value: r.to_dict() for c, r in reps.items()}
        details["verdicts_agree"] = len({r.passed for r in reps.values()}) == 1
        details["dissipation_pass_carries_over"] = bool(follows)
        return CertReport("issf_bf[cross_check]", base.n_points, worst, base.worst_point,
                          all(r.passed for r in reps.values()), CheckMode.INEQUALITY, INEQUALITY_TOL, details)

    m1 = plant.dist_dim
    W = np.asarray(w_grid, dtype=float).reshape(-1, m1) if m1 else np.zeros((1, 0))
    if not np.all(np.isfinite(W)):
        raise InvalidInputError("w_grid must be finite")
    X = sample_points(box, n, seed)
    XX = np.repeat(X, len(W), axis=0)
    WW = np.tile(W, (len(X), 1))
    hx = barrier.h(XX)
    rw = rho.eval(np.linalg.norm(WW, axis=-1))
    rate = _closed_loop_rate(plant, barrier, closed_loop_u, XX, WW, sigma)
    margin = rate + alpha.eval(hx)
    if condition is Condition.DISSIPATION:
        margin = margin + rw
    elif condition is Condition.MAGNITUDE:
        margin = np.where(np.abs(hx) >= rw - GUARD_BAND, margin, np.inf)
    else:
        margin = np.where(np.minimum(0.0, hx) <= -rw + GUARD_BAND, margin, np.inf)
    return _report(f"issf_bf[{condition.value}]", margin, XX, CheckMode.INEQUALITY, INEQUALITY_TOL,
                   extra_cols=WW, sigma=sigma, vacuous=int(np.count_nonzero(np.isinf(margin))))


# ---------------------------------------------------------------- realized cost


@dataclass
class CostAccount:
    terminal: float
    running_l: float
    running_penalty: float
    running_dist_reward: float
    truncated: bool = False
    end_time: float = float("nan")

    @property
    def total(self) -> float:
        with np.errstate(invalid="ignore"):
            return self.terminal + self.running_l - self.running_penalty + self.running_dist_reward

    def to_dict(self) -> dict:
        d = {k: _json_float(v) if isinstance(v, float) else v for k, v in asdict(self).items()}
        d["total"] = _json_float(self.total)
        return d


def _cost_integrand(spec: FilterSpec, lam: float):
    kind = spec.kind
    gamma = spec.barrier.gamma

    def accumulate(x, u0, u, w, terms, idx):
        l = penalty_from_terms(kind, terms, lam)
        r = control_weight(kind, terms)
        v = u - u0
        vv = np.sum(v * v, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            pen = np.where(vv == 0.0, 0.0, np.where(r > 0, vv / np.where(r > 0, r, 1.0), np.inf))
        wn = np.linalg.norm(w, axis=-1)
        if gamma is None:
            if np.any(wn > 0):
                raise ConfigurationError("a disturbance reward needs gamma on the barrier")
            rew = np.zeros_like(wn)
        else:
            rew = 2.0 * lam * gamma.eval(wn / lam)
        return np.stack([l, pen, rew], axis=-1)

    return accumulate


def realized_costs(plant: ControlAffinePlant, barrier: BarrierCandidate, filter_kind: FilterKind,
                   u0: Callable, x0_set, w_signal: Optional[DisturbanceSignal] = None, sigma: float = 1.0,
                   horizon: float = 20.0, lam: float = 2.0, *, dt: float = DEFAULT_DT,
                   control_offsets=None, uses_gamma: bool = False,
                   escape_radius: float = DEFAULT_ESCAPE) -> list[CostAccount]:
    """Realized cost of several runs integrated as one batch.

    Each ``x0`` in ``x0_set`` pairs with the matching row of
    ``control_offsets`` (a constant added to the filtered control), which
    defaults to zero.
    """
    if not horizon > 0:
        raise InvalidInputError("horizon must be positive")
    if not 0 < lam <= 2:
        raise InvalidInputError("lambda must lie in (0, 2]")
    spec = FilterSpec(filter_kind, barrier, uses_gamma)
    if spec.r_inv is not None:
        raise ConfigurationError("realized cost needs a built-in weight")
    X0 = as_states(x0_set, plant.state_dim)
    w_signal = w_signal or DisturbanceSignal.zero()
    res = simulate_batch(plant, spec, u0, X0, sigma, [w_signal] * len(X0), dt=dt, horizon=horizon,
                         escape_radius=escape_radius, offset=control_offsets, refine_events=False,
                         accumulate=_cost_integrand(spec, lam), n_acc=3)
    out = []
    for r in res:
        if r.error is not None:
            raise r.error
        if r.escaped:
            warnings.warn(f"trajectory left the working region at t={r.end_time:.4g}; cost truncated",
                          EscapeWarning, stacklevel=2)
        acc = r.accumulators
        out.append(CostAccount(4.0 * r.final_h, float(acc[0]), float(acc[1]), float(acc[2]),
                               r.escaped, r.end_time))
    return out


def realized_cost(plant: ControlAffinePlant, barrier: BarrierCandidate, filter_kind: FilterKind,
                  u0: Callable, x0, w_signal: Optional[DisturbanceSignal] = None, sigma: float = 1.0,
                  horizon: float = 20.0, lam: float = 2.0, **kw) -> CostAccount:
    """Cost of one closed-loop run: terminal ``4 h`` plus the running terms."""
    offset = kw.pop("control_offset", None)
    if offset is not None:
        kw["control_offsets"] = np.atleast_2d(offset)
    return realized_costs(plant, barrier, filter_kind, u0, [x0], w_signal, sigma, horizon, lam, **kw)[0]
