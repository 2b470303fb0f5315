"""Closed-loop simulation under gain perturbation and disturbances.

The integrator is classical fixed-step RK4 on

    xdot = f(x) + g1(x) w(t) + sigma g2(x) u(x),   u = u0(x) + override(x, u0(x)).

Many runs are integrated together as one batch: every cell has its own
initial state, gain ``sigma``, disturbance and constant control offset,
while the step and clock are shared.  Cells that escape or fault are
dropped from the active set as they go.  Sign changes of ``h`` between
samples are located by bisecting the RK4 sub-step.
"""
from __future__ import annotations

import csv
import enum
import math
import multiprocessing as mp
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .filters import FilterError, FilterSpec, compute_terms
from .plant import BarrierCandidate, ControlAffinePlant, NumericError, as_states

SAFETY_TOL = 1e-6
SETTLE_TOL = 1e-3
EVENT_TIME_TOL = 1e-9
EVENT_H_TOL = 1e-9
EVENT_MAX_ITER = 60
MARGINAL_BAND = (-1e-6, -1e-9)
DEFAULT_DT = 1e-3
DEFAULT_HORIZON = 20.0
DEFAULT_ESCAPE = 1e3
SIGMA_DT_REF = 10.0


class SimConfigError(ValueError):
    """Invalid simulation setting; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class EscapeWarning(UserWarning):
    pass


# ---------------------------------------------------------------- disturbances


class DisturbanceKind(enum.Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    SINUSOID = "sinusoid"
    SEEDED_BOUNDED = "seeded_bounded"


@dataclass(frozen=True)
class DisturbanceSignal:
    """Open-loop disturbance ``w(t)``.

    Vector signals are a scalar profile times a unit ``direction``; the
    declared ``amplitude`` is the sup-norm.  ``Constant`` takes its value
    (scalar or vector) directly.
    """

    kind: DisturbanceKind = DisturbanceKind.ZERO
    amplitude: float = 0.0
    value: Optional[tuple] = None
    frequency: float = 0.0
    phase: float = 0.0
    seed: int = 0
    hold_time: float = 0.1
    direction: Optional[tuple] = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise SimConfigError("amplitude", "must be >= 0")
        if self.kind is DisturbanceKind.SEEDED_BOUNDED and self.hold_time <= 0:
            raise SimConfigError("hold_time", "must be > 0")
        if self.kind is DisturbanceKind.SINUSOID and self.frequency < 0:
            raise SimConfigError("frequency", "must be >= 0")

    @classmethod
    def zero(cls) -> "DisturbanceSignal":
        return cls()

    @classmethod
    def constant(cls, value) -> "DisturbanceSignal":
        v = tuple(np.atleast_1d(np.asarray(value, dtype=float)).tolist())
        return cls(DisturbanceKind.CONSTANT, float(np.linalg.norm(v)), value=v)

    @classmethod
    def sinusoid(cls, amplitude, frequency, phase=0.0, direction=None) -> "DisturbanceSignal":
        d = None if direction is None else tuple(np.ravel(direction).tolist())
        return cls(DisturbanceKind.SINUSOID, float(amplitude), frequency=float(frequency),
                   phase=float(phase), direction=d)

    @classmethod
    def seeded_bounded(cls, amplitude, seed, hold_time=0.1, direction=None) -> "DisturbanceSignal":
        d = None if direction is None else tuple(np.ravel(direction).tolist())
        return cls(DisturbanceKind.SEEDED_BOUNDED, float(amplitude), seed=int(seed),
                   hold_time=float(hold_time), direction=d)

    @property
    def sup_norm(self) -> float:
        return 0.0 if self.kind is DisturbanceKind.ZERO else self.amplitude

    @property
    def label(self) -> str:
        k = self.kind
        if k is DisturbanceKind.ZERO:
            return "zero"
        if k is DisturbanceKind.CONSTANT:
            return "const(" + ",".join(f"{v:g}" for v in self.value) + ")"
        if k is DisturbanceKind.SINUSOID:
            return f"sin(a={self.amplitude:g},f={self.frequency:g},ph={self.phase:g})"
        return f"seeded(a={self.amplitude:g},seed={self.seed},hold={self.hold_time:g})"

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.kind is DisturbanceKind.CONSTANT:
            out["value"] = list(self.value)
        elif self.kind is not DisturbanceKind.ZERO:
            out["amplitude"] = self.amplitude
        if self.kind is DisturbanceKind.SINUSOID:
            out.update(frequency=self.frequency, phase=self.phase)
        if self.kind is DisturbanceKind.SEEDED_BOUNDED:
            out.update(seed=self.seed, hold_time=self.hold_time)
        if self.direction is not None:
            out["direction"] = list(self.direction)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DisturbanceSignal":
        d = dict(d)
        kind = DisturbanceKind(d.pop("kind"))
        if kind is DisturbanceKind.ZERO:
            return cls.zero()
        if kind is DisturbanceKind.CONSTANT:
            return cls.constant(d["value"])
        if kind is DisturbanceKind.SINUSOID:
            return cls.sinusoid(d["amplitude"], d["frequency"], d.get("phase", 0.0), d.get("direction"))
        return cls.seeded_bounded(d["amplitude"], d["seed"], d.get("hold_time", 0.1), d.get("direction"))

    def __call__(self, t, dist_dim: int = 1, horizon: Optional[float] = None) -> np.ndarray:
        """Evaluate at scalar or array ``t``; returns ``(..., dist_dim)``."""
        t = np.asarray(t, dtype=float)
        bank = DisturbanceBank([self], dist_dim, horizon if horizon is not None else float(np.max(t)) + 1.0)
        w = bank(t.ravel(), np.zeros(t.size, dtype=int))
        return w.reshape(t.shape + (dist_dim,))


def _unit(direction, dim: int) -> np.ndarray:
    if direction is None:
        return np.full(dim, 1.0 / math.sqrt(dim)) if dim else np.zeros(0)
    d = np.asarray(direction, dtype=float)
    if d.shape != (dim,):
        raise SimConfigError("direction", f"needs {dim} entries, got {d.size}")
    n = np.linalg.norm(d)
    if n == 0:
        raise SimConfigError("direction", "must be nonzero")
    return d / n


class DisturbanceBank:
    """Vectorized evaluation of one disturbance signal per cell."""

    def __init__(self, signals: Sequence[DisturbanceSignal], dist_dim: int, horizon: float):
        B = len(signals)
        self.dist_dim = m = dist_dim
        self.scale = np.zeros(B)
        self.dirs = np.zeros((B, m))
        self.is_sin = np.zeros(B, dtype=bool)
        self.freq = np.zeros(B)
        self.phase = np.zeros(B)
        self.is_held = np.zeros(B, dtype=bool)
        self.hold = np.ones(B)
        n_hold = 1
        for s in signals:
            if s.kind is DisturbanceKind.SEEDED_BOUNDED:
                n_hold = max(n_hold, int(math.ceil(horizon / s.hold_time)) + 2)
        self.table = np.zeros((B, n_hold))
        self._zero = True
        if m == 0:
            return
        for i, s in enumerate(signals):
            k = s.kind
            if k is DisturbanceKind.CONSTANT:
                v = np.asarray(s.value, dtype=float)
                if v.size == 1 and m > 1:
                    v = v[0] * _unit(s.direction, m)
                if v.shape != (m,):
                    raise SimConfigError("value", f"constant disturbance needs {m} entries")
                self.dirs[i] = v
                self.scale[i] = 1.0
            elif k is DisturbanceKind.SINUSOID:
                self.dirs[i] = _unit(s.direction, m)
                self.is_sin[i] = True
                self.scale[i] = s.amplitude
                self.freq[i] = s.frequency
                self.phase[i] = s.phase
            elif k is DisturbanceKind.SEEDED_BOUNDED:
                rng = np.random.default_rng(s.seed)
                if s.direction is None and m > 1:
                    d = rng.standard_normal(m)
                    self.dirs[i] = d / np.linalg.norm(d)
                else:
                    self.dirs[i] = _unit(s.direction, m)
                sign = 1.0 if rng.random() < 0.5 else -1.0
                vals = rng.uniform(-s.amplitude, s.amplitude, size=n_hold)
                # pin the first hold to +-a so the sup-norm is attained exactly
                vals[0] = sign * s.amplitude
                self.table[i] = vals
                self.is_held[i] = True
                self.hold[i] = s.hold_time
                self.scale[i] = 1.0
        self._zero = self.all_zero

    @property
    def all_zero(self) -> bool:
        return not (self.dirs.any() and self.scale.any())

    def __call__(self, t, idx: np.ndarray) -> np.ndarray:
        if self.dist_dim == 0 or self._zero:
            return np.zeros((len(idx), self.dist_dim))
        t = np.broadcast_to(np.asarray(t, dtype=float), idx.shape)
        prof = self.scale[idx].copy()
        sin = self.is_sin[idx]
        if np.any(sin):
            prof[sin] *= np.sin(2 * np.pi * self.freq[idx][sin] * t[sin] + self.phase[idx][sin])
        held = self.is_held[idx]
        if np.any(held):
            k = np.floor(t[held] / self.hold[idx][held]).astype(int)
            k = np.clip(k, 0, self.table.shape[1] - 1)
            prof[held] = self.table[idx[held], k]
        return prof[:, None] * self.dirs[idx]


# ---------------------------------------------------------------- config and results


@dataclass(frozen=True)
class SimConfig:
    dt: float = DEFAULT_DT
    horizon: float = DEFAULT_HORIZON
    sigma: float = 1.0
    x0: tuple = (0.0,)
    w_signal: DisturbanceSignal = field(default_factory=DisturbanceSignal)
    escape_radius: float = DEFAULT_ESCAPE

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(np.ravel(np.asarray(self.x0, dtype=float)).tolist()))
        for name in ("dt", "horizon", "sigma", "escape_radius"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise SimConfigError(name, f"must be positive and finite, got {v}")
        if self.dt > self.horizon:
            raise SimConfigError("dt", "must not exceed horizon")
        if not np.all(np.isfinite(self.x0)):
            raise SimConfigError("x0", "must be finite")
        if self.escape_radius <= np.linalg.norm(self.x0):
            raise SimConfigError("escape_radius", "must exceed |x0|")


@dataclass
class CrossingEvent:
    time: float
    direction: str  # "exit" or "entry"
    h: float


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    disturbances: np.ndarray
    h_values: np.ndarray
    events: list
    escaped: bool = False
    error: Optional[str] = None

    def __len__(self):
        return len(self.times)

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


@dataclass(frozen=True)
class ViolationMetrics:
    h_min: float
    max_set_violation: float
    safe_verdict: bool
    settled: bool
    distance_exact: bool = True


def _g17(v) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n, m2, m1 = traj.states.shape[1], traj.controls.shape[1], traj.disturbances.shape[1]
    head = ["t"] + [f"x_{i+1}" for i in range(n)] + [f"u_{i+1}" for i in range(m2)] \
        + [f"w_{i+1}" for i in range(m1)] + ["h"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(head)
        for k in range(len(traj.times)):
            row = [traj.times[k], *traj.states[k], *traj.controls[k], *traj.disturbances[k], traj.h_values[k]]
            wr.writerow([_g17(v) for v in row])


# ---------------------------------------------------------------- batched engine


@dataclass
class CellResult:
    """Outcome of one simulated cell."""

    h_min: float
    max_violation: float
    distance_exact: bool
    final_h: float
    final_state: np.ndarray
    settled: bool
    diverging: bool
    escaped: bool
    n_events: int
    error: Optional[BaseException] = None
    error_time: float = float("nan")
    trajectory: Optional[Trajectory] = None
    accumulators: Optional[np.ndarray] = None
    end_time: float = float("nan")

    @property
    def safe_verdict(self) -> bool:
        return self.error is None and self.h_min >= -SAFETY_TOL


def _as_controls(u, batch: int, m2: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape == (batch, m2):
        return u
    return np.broadcast_to(u.reshape(batch, m2) if u.size == batch * m2 else u, (batch, m2))


class ClosedLoop:
    """Right-hand side of a batch of perturbed closed loops."""

    def __init__(self, plant: ControlAffinePlant, spec: FilterSpec, u0_fn: Callable,
                 sigma, offset, bank: DisturbanceBank, accumulate: Optional[Callable] = None):
        self.plant, self.spec, self.u0_fn = plant, spec, u0_fn
        self.sigma = np.asarray(sigma, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.bank = bank
        self.accumulate = accumulate

    def __call__(self, x, t, idx):
        plant = self.plant
        B = x.shape[0]
        fx = plant.f(x)
        g2x = plant.g2(x)
        u0 = _as_controls(self.u0_fn(x), B, plant.ctrl_dim)
        terms = compute_terms(self.spec, plant, x, u0, fx=fx, g2x=g2x)
        u = terms.output.u_total + self.offset[idx]
        dx = fx + self.sigma[idx, None] * np.einsum("bij,bj->bi", g2x, u)
        w = self.bank(t, idx)
        if plant.dist_dim and not self.bank._zero:
            dx = dx + np.einsum("bij,bj->bi", plant.g1(x), w)
        dacc = None
        if self.accumulate is not None:
            dacc = self.accumulate(x, u0, u, w, terms, idx)
        return dx, dacc, u, w, terms


def _rk4(loop: ClosedLoop, x, acc, t, h, idx):
    """One RK4 step of size ``h`` (scalar or per cell).  Returns the new
    state, accumulators, the first-stage control/disturbance/terms and a
    fault mask gathered over all stages."""
    hh = np.asarray(h, dtype=float)
    hc = hh[:, None] if hh.ndim else hh
    k1, a1, u, w, terms = loop(x, t, idx)
    k2, a2, _, _, t2 = loop(x + 0.5 * hc * k1, t + 0.5 * hh, idx)
    k3, a3, _, _, t3 = loop(x + 0.5 * hc * k2, t + 0.5 * hh, idx)
    k4, a4, _, _, t4 = loop(x + hc * k3, t + hh, idx)
    fault = terms.fault | t2.fault | t3.fault | t4.fault
    kind = terms.fault_kind or t2.fault_kind or t3.fault_kind or t4.fault_kind
    x_new = x + (hc / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    acc_new = None
    if acc is not None:
        acc_new = acc + (hc / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
    return x_new, acc_new, u, w, terms, fault, kind


def _n_steps(dt: float, horizon: float) -> int:
    n = horizon / dt
    return max(1, int(round(n)) if abs(n - round(n)) < 1e-9 * max(1.0, n) else int(math.ceil(n)))


def simulate_batch(plant: ControlAffinePlant, spec: FilterSpec, u0_fn: Callable,
                   x0, sigma, signals: Sequence[DisturbanceSignal], *, dt: float = DEFAULT_DT,
                   horizon: float = DEFAULT_HORIZON, escape_radius: float = DEFAULT_ESCAPE,
                   offset=None, record: bool = False, refine_events: bool = True,
                   accumulate: Optional[Callable] = None, n_acc: int = 0) -> list[CellResult]:
    """Integrate a batch of cells sharing ``dt`` and the clock.

    ``x0`` is ``(B, n)``; ``sigma`` and ``signals`` are per cell (or
    broadcast).  With ``record`` the full sampled trajectories, including
    refined crossing samples, are attached to the results.
    ``accumulate(x, u0, u, w, terms, idx) -> (B, n_acc)`` adds integrated
    running quantities carried along with the state.
    """
    barrier = spec.barrier
    n, m1, m2 = plant.state_dim, plant.dist_dim, plant.ctrl_dim
    x0 = as_states(x0, n)
    B = x0.shape[0]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (B,)).copy()
    if isinstance(signals, DisturbanceSignal):
        signals = [signals] * B
    if len(signals) != B:
        raise SimConfigError("w_signal", "one disturbance per cell required")
    offset = np.zeros((B, m2)) if offset is None else np.broadcast_to(
        np.asarray(offset, dtype=float).reshape(-1, m2), (B, m2)).copy()
    bank = DisturbanceBank(signals, m1, horizon + dt)
    loop = ClosedLoop(plant, spec, u0_fn, sigma, offset, bank, accumulate)
    N = _n_steps(dt, horizon)

    idx = np.arange(B)
    x = x0.copy()
    acc = np.zeros((B, n_acc)) if accumulate is not None else None
    h_prev = barrier.h(x)
    dist0, exact = barrier.distance(x)

    h_min = h_prev.copy()
    max_viol = np.asarray(dist0, dtype=float).copy()
    below = h_prev < -SETTLE_TOL
    escaped = np.zeros(B, dtype=bool)
    errors: list = [None] * B
    err_time = np.full(B, np.nan)
    end_time = np.zeros(B)
    final_x = x0.copy()
    final_h = h_prev.copy()
    prev_h_final = h_prev.copy()
    n_events = np.zeros(B, dtype=int)
    acc_final = np.zeros((B, n_acc)) if acc is not None else None

    if record:
        T = np.arange(N + 1) * dt
        Xs = np.full((N + 1, B, n), np.nan)
        Us = np.full((N + 1, B, m2), np.nan)
        Ws = np.full((N + 1, B, m1), np.nan)
        Hs = np.full((N + 1, B), np.nan)
        Xs[0] = x
        Hs[0] = h_prev
        last_k = np.zeros(B, dtype=int)
        ev_rec: list[list] = [[] for _ in range(B)]

    def drop(mask):
        nonlocal idx, x, acc, h_prev
        keep = ~mask
        idx, x, h_prev = idx[keep], x[keep], h_prev[keep]
        if acc is not None:
            acc = acc[keep]

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            if idx.size == 0:
                break
            t = k * dt
            x_new, acc_new, u, w, terms, fault, fkind = _rk4(loop, x, acc, t, dt, idx)
            if record:
                Us[k, idx] = u
                Ws[k, idx] = w
            bad = fault | ~np.all(np.isfinite(x_new), axis=1)
            if np.any(bad):
                for j in np.flatnonzero(bad):
                    c = idx[j]
                    if fault[j]:
                        errors[c] = (fkind or FilterError)(
                            f"filter fault at t={t:.6g}", x[j])
                    else:
                        errors[c] = NumericError(f"non-finite state at t={t + dt:.6g}", x[j])
                    err_time[c] = t
                    end_time[c] = t
                    final_x[c] = x[j]
                    final_h[c] = h_prev[j]
                    if acc is not None:
                        acc_final[c] = acc[j]
                drop(bad)
                x_new, u, w = x_new[~bad], u[~bad], w[~bad]
                if acc_new is not None:
                    acc_new = acc_new[~bad]
                if idx.size == 0:
                    break
            h_new = barrier.h(x_new)
            d_new, _ = barrier.distance(x_new)
            ci = idx
            h_min[ci] = np.minimum(h_min[ci], h_new)
            max_viol[ci] = np.maximum(max_viol[ci], d_new)

            exit_ = (h_prev >= 0) & (h_new < 0)
            entry = (h_prev < 0) & (h_new >= 0)
            cross = exit_ | entry
            if np.any(cross):
                n_events[ci[cross]] += 1
                if refine_events or record:
                    ev = _refine_crossings(loop, barrier, x[cross], h_prev[cross], t, dt, ci[cross])
                    for j, c in enumerate(ci[cross]):
                        tau, xe, he, ue, we = ev[0][j], ev[1][j], ev[2][j], ev[3][j], ev[4][j]
                        h_min[c] = min(h_min[c], he)
                        if record:
                            direction = "exit" if h_prev[cross][j] >= 0 else "entry"
                            ev_rec[c].append((k, t + tau, direction, xe, ue, we, he))
            # settling bookkeeping: h below the settle band at any later sample resets it
            below[ci] = h_new < -SETTLE_TOL
            prev_h_final[ci] = h_prev
            x, h_prev = x_new, h_new
            if acc is not None:
                acc = acc_new
            if record:
                Xs[k + 1, ci] = x
                Hs[k + 1, ci] = h_new
                last_k[ci] = k + 1
            out = np.linalg.norm(x, axis=1) > escape_radius
            if np.any(out):
                oc = ci[out]
                escaped[oc] = True
                end_time[oc] = (k + 1) * dt
                final_x[oc] = x[out]
                final_h[oc] = h_prev[out]
                if acc is not None:
                    acc_final[oc] = acc[out]
                drop(out)

    if idx.size:
        end_time[idx] = N * dt
        final_x[idx] = x
        final_h[idx] = h_prev
        if acc is not None:
            acc_final[idx] = acc

    if record and idx.size + np.count_nonzero(escaped) > 0:
        # control and disturbance at the last sample of surviving or escaped cells
        tail = np.flatnonzero(np.array([errors[c] is None for c in range(B)]))
        if tail.size:
            xs = np.stack([Xs[last_k[c], c] for c in tail])
            ts = last_k[tail] * dt
            _, _, u, w, _ = loop(xs, ts, tail)
            for j, c in enumerate(tail):
                Us[last_k[c], c] = u[j]
                Ws[last_k[c], c] = w[j]

    results = []
    for c in range(B):
        settled = errors[c] is None and not below[c] and final_h[c] >= -SETTLE_TOL
        diverging = errors[c] is None and not settled and (
            (escaped[c] and final_h[c] < 0) or final_h[c] < prev_h_final[c])
        traj = None
        if record:
            traj = _assemble(T, Xs[:, c], Us[:, c], Ws[:, c], Hs[:, c], last_k[c], ev_rec[c],
                             bool(escaped[c]), errors[c])
        results.append(CellResult(
            h_min=float(h_min[c]), max_violation=float(max_viol[c]), distance_exact=bool(exact),
            final_h=float(final_h[c]), final_state=final_x[c].copy(), settled=bool(settled),
            diverging=bool(diverging), escaped=bool(escaped[c]), n_events=int(n_events[c]),
            error=errors[c], error_time=float(err_time[c]), trajectory=traj,
            accumulators=None if acc_final is None else acc_final[c].copy(),
            end_time=float(end_time[c]),
        ))
    return results


def _refine_crossings(loop, barrier, xk, hk, t, dt, idx):
    """Bisect the RK4 sub-step for the crossing time of each cell."""
    m = xk.shape[0]
    lo = np.zeros(m)
    hi = np.full(m, dt)
    side = hk >= 0
    h_lo = hk.copy()
    x_hi, _, _, _, _, _, _ = _rk4(loop, xk, None, t, hi, idx)
    h_hi = barrier.h(x_hi)
    x_lo = xk.copy()
    for _ in range(EVENT_MAX_ITER):
        done = (hi - lo <= EVENT_TIME_TOL) & (np.minimum(np.abs(h_lo), np.abs(h_hi)) <= EVENT_H_TOL)
        if np.all(done):
            break
        mid = 0.5 * (lo + hi)
        xm, _, _, _, _, _, _ = _rk4(loop, xk, None, t, mid, idx)
        hm = barrier.h(xm)
        same = (hm >= 0) == side
        lo = np.where(same, mid, lo)
        h_lo = np.where(same, hm, h_lo)
        x_lo = np.where(same[:, None], xm, x_lo)
        hi = np.where(same, hi, mid)
        h_hi = np.where(same, h_hi, hm)
        x_hi = np.where(same[:, None], x_hi, xm)
    # keep strictly inside the step so sample times stay increasing
    use_hi = ((lo <= 0) | (np.abs(h_hi) <= np.abs(h_lo))) & (hi < dt)
    tau = np.where(use_hi, hi, lo)
    xe = np.where(use_hi[:, None], x_hi, x_lo)
    he = np.where(use_hi, h_hi, h_lo)
    _, _, ue, we, _ = loop(xe, t + tau, idx)
    return tau, xe, he, ue, we


def _assemble(T, X, U, W, H, last, events, escaped, error) -> Trajectory:
    times, states, ctrls, dists, hs = [T[:last + 1]], [X[:last + 1]], [U[:last + 1]], [W[:last + 1]], [H[:last + 1]]
    ev_out = []
    if events:
        # splice refined samples in after their step's starting sample
        pieces_t, pieces_x, pieces_u, pieces_w, pieces_h = [], [], [], [], []
        start = 0
        for (k, te, direction, xe, ue, we, he) in events:
            ev_out.append(CrossingEvent(float(te), direction, float(he)))
            if not (T[k] < te < T[k + 1]):
                continue
            pieces_t += [T[start:k + 1], [te]]
            pieces_x += [X[start:k + 1], xe[None]]
            pieces_u += [U[start:k + 1], ue[None]]
            pieces_w += [W[start:k + 1], we[None]]
            pieces_h += [H[start:k + 1], [he]]
            start = k + 1
        pieces_t.append(T[start:last + 1])
        pieces_x.append(X[start:last + 1])
        pieces_u.append(U[start:last + 1])
        pieces_w.append(W[start:last + 1])
        pieces_h.append(H[start:last + 1])
        times = [np.concatenate(pieces_t)]
        states = [np.concatenate(pieces_x)]
        ctrls = [np.concatenate(pieces_u)]
        dists = [np.concatenate(pieces_w)]
        hs = [np.concatenate(pieces_h)]
    return Trajectory(times[0].astype(float), states[0], ctrls[0], dists[0], hs[0].astype(float),
                      ev_out, escaped, None if error is None else repr(error))


# ---------------------------------------------------------------- single runs


def integrate(plant: ControlAffinePlant, filter_spec: FilterSpec, u0: Callable,
              cfg: SimConfig, control_offset=None) -> Trajectory:
    """Simulate one closed loop and return its sampled trajectory.

    Raises the filter error (with the state attached) if the filter
    faults mid-run, or :class:`NumericError` on a non-finite state.  An
    escape beyond ``cfg.escape_radius`` ends the run early with
    ``escaped=True``.
    """
    if len(cfg.x0) != plant.state_dim:
        raise SimConfigError("x0", f"needs {plant.state_dim} entries")
    res = simulate_batch(plant, filter_spec, u0, [cfg.x0], cfg.sigma, [cfg.w_signal], dt=cfg.dt,
                         horizon=cfg.horizon, escape_radius=cfg.escape_radius,
                         offset=control_offset, record=True)[0]
    if res.error is not None:
        err = res.error
        err.time = res.error_time
        raise err
    return res.trajectory


def violation_metrics(traj: Trajectory, barrier: BarrierCandidate) -> ViolationMetrics:
    """Worst barrier value and set distance along a sampled trajectory."""
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    h = np.asarray(traj.h_values, dtype=float)
    dist, exact = barrier.distance(traj.states)
    h_min = float(np.min(h))
    below = np.flatnonzero(h < -SETTLE_TOL)
    settled = h[-1] >= -SETTLE_TOL and (below.size == 0 or below[-1] < len(h) - 1)
    return ViolationMetrics(h_min, float(np.max(dist)), h_min >= -SAFETY_TOL, bool(settled), bool(exact))


# ---------------------------------------------------------------- parallel fan-out

_POOL_CTX: dict = {}


def _pool_init(ctx):
    _POOL_CTX.update(ctx)


def _pool_task(job):
    ctx = _POOL_CTX
    return job[0], simulate_batch(ctx["plant"], ctx["spec"], ctx["u0"], **job[1])


def _run_jobs(plant, spec, u0_fn, jobs: list[dict], workers: int) -> list[list[CellResult]]:
    """Run batch jobs, optionally on a fork-based process pool, in order."""
    workers = max(1, int(workers or 1))
    if workers > 1 and len(jobs) > 1 and "fork" in mp.get_all_start_methods():
        ctx = {"plant": plant, "spec": spec, "u0": u0_fn}
        out: list = [None] * len(jobs)
        with ProcessPoolExecutor(min(workers, len(jobs)), mp_context=mp.get_context("fork"),
                                 initializer=_pool_init, initargs=(ctx,)) as ex:
            for i, res in ex.map(_pool_task, list(enumerate(jobs))):
                out[i] = res
        return out
    return [simulate_batch(plant, spec, u0_fn, **job) for job in jobs]


def _chunks(n: int, k: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n), max(1, min(k, n))) if c.size]


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def sigma_dt(dt: float, sigma: float, ref: Optional[float] = SIGMA_DT_REF) -> float:
    """Step used at gain ``sigma``: ``dt`` shrunk by ``ref / sigma`` above ``ref``.

    High gains scale the closed-loop eigenvalues; shrinking the step keeps
    ``sigma * dt`` inside the RK4 stability region.
    """
    if ref is None or sigma <= ref:
        return dt
    return dt * ref / sigma


def _run_cells(plant, spec, u0_fn, cells: list[dict], dt: float, horizon: float,
               escape_radius: float, workers: int, refine_marginal: bool = True) -> list[CellResult]:
    """Run independent cells grouped by their step, keyed by cell index."""
    groups: dict[float, list[int]] = {}
    for i, c in enumerate(cells):
        groups.setdefault(c.get("dt", dt), []).append(i)
    jobs, owners = [], []
    per_group_split = max(1, workers)
    for gdt, members in groups.items():
        for chunk in _chunks(len(members), per_group_split):
            ids = [members[j] for j in chunk]
            jobs.append(dict(
                x0=np.stack([cells[i]["x0"] for i in ids]),
                sigma=np.array([cells[i]["sigma"] for i in ids]),
                signals=[cells[i]["w"] for i in ids],
                dt=gdt, horizon=horizon, escape_radius=escape_radius,
                refine_events=False,
            ))
            owners.append(ids)
    results: list = [None] * len(cells)
    for ids, res in zip(owners, _run_jobs(plant, spec, u0_fn, jobs, workers)):
        for i, r in zip(ids, res):
            results[i] = r
    if refine_marginal:
        marginal = [i for i, r in enumerate(results)
                    if r.error is None and MARGINAL_BAND[0] <= r.h_min <= MARGINAL_BAND[1]]
        for i in marginal:
            c = cells[i]
            results[i] = simulate_batch(plant, spec, u0_fn, c["x0"][None], c["sigma"], [c["w"]],
                                        dt=c.get("dt", dt) / 10, horizon=horizon,
                                        escape_radius=escape_radius, refine_events=False)[0]
    return results


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    x0_id: str
    disturbance_id: str
    h_min: float
    max_violation: float
    verdict: str
    settled: bool
    probe: bool = False
    diverging: bool = False
    escaped: bool = False
    error: Optional[str] = None


@dataclass(frozen=True)
class EmpiricalMargin:
    """Contiguous run of safe grid gains around ``sigma = 1``.

    ``unbounded_above`` marks runs that reach the top of the grid, i.e. an
    ``[lo, inf)``-on-grid margin.
    """

    lo: float
    hi: float
    unbounded_above: bool
    unbounded_below: bool

    def as_interval(self) -> tuple[float, float]:
        return (self.lo, float("inf") if self.unbounded_above else self.hi)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": "inf" if self.unbounded_above else self.hi,
                "grid_hi": self.hi, "unbounded_below": self.unbounded_below}


@dataclass
class SweepReport:
    sigmas: list
    rows: list
    verdicts: dict  # sigma -> "safe" | "unsafe" | "inconclusive"
    probes_settled: dict  # sigma -> bool or None when no probe ran
    margin: Optional[EmpiricalMargin]

    def safe_sigmas(self) -> list:
        return [s for s in self.sigmas if self.verdicts[s] == "safe"]

    def rows_for(self, sigma=None, probe=None) -> list:
        return [r for r in self.rows if (sigma is None or r.sigma == sigma)
                and (probe is None or r.probe == probe)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["sigma", "x0_id", "disturbance_id", "h_min", "max_violation", "verdict", "settled"])
            for r in self.rows:
                wr.writerow([_g17(r.sigma), r.x0_id, r.disturbance_id, _g17(r.h_min),
                             _g17(r.max_violation), r.verdict, str(r.settled).lower()])

    def to_dict(self) -> dict:
        return {
            "sigmas": list(self.sigmas),
            "verdicts": {repr(float(s)): v for s, v in self.verdicts.items()},
            "probes_settled": {repr(float(s)): v for s, v in self.probes_settled.items()},
            "empirical_margin": None if self.margin is None else self.margin.to_dict(),
        }


def _cell_verdict(r: CellResult) -> str:
    if r.error is not None:
        return "inconclusive"
    return "safe" if r.h_min >= -SAFETY_TOL else "unsafe"


def empirical_margin(sigmas: Sequence[float], verdicts: dict) -> Optional[EmpiricalMargin]:
    """Maximal contiguous safe run containing the grid gain nearest to 1."""
    if not sigmas:
        return None
    sig = list(sigmas)
    centre = int(np.argmin(np.abs(np.asarray(sig) - 1.0)))
    if verdicts[sig[centre]] != "safe":
        return None
    lo = hi = centre
    while lo > 0 and verdicts[sig[lo - 1]] == "safe":
        lo -= 1
    while hi < len(sig) - 1 and verdicts[sig[hi + 1]] == "safe":
        hi += 1
    return EmpiricalMargin(float(sig[lo]), float(sig[hi]), hi == len(sig) - 1, lo == 0)


def gain_sweep(plant: ControlAffinePlant, filter_spec: FilterSpec, u0: Callable,
               sigmas: Sequence[float], base_cfg: SimConfig, x0_set, *,
               exterior_probes=(), disturbances: Optional[Sequence[DisturbanceSignal]] = None,
               workers: int = 1, sigma_dt_ref: Optional[float] = SIGMA_DT_REF) -> SweepReport:
    """Per-gain safety verdicts over a set of initial states.

    Every ``sigma`` runs each ``x0`` (all inside the safe set) under each
    disturbance; the verdict is the AND of the cell verdicts, or
    ``"inconclusive"`` if a cell faulted.  ``exterior_probes`` are launched
    from outside the safe set to test attraction; they do not enter the
    verdict.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise SimConfigError("sigmas", "must be non-empty")
    if any(b < a for a, b in zip(sigmas, sigmas[1:])):
        raise SimConfigError("sigmas", "must be sorted ascending")
    if any(s <= 0 for s in sigmas):
        raise SimConfigError("sigmas", "must be positive")
    n = plant.state_dim
    X0 = as_states(x0_set, n)
    if np.any(filter_spec.barrier.h(X0) < 0):
        raise SimConfigError("x0_set", "all initial states must lie in the safe set")
    P = as_states(exterior_probes, n) if len(exterior_probes) else np.zeros((0, n))
    dists = list(disturbances) if disturbances is not None else [base_cfg.w_signal]

    cells, meta = [], []
    for s in sigmas:
        dts = sigma_dt(base_cfg.dt, s, sigma_dt_ref)
        for i, x in enumerate(X0):
            for w in dists:
                cells.append(dict(x0=x, sigma=s, w=w, dt=dts))
                meta.append((s, f"x{i}", w.label, False))
        for i, x in enumerate(P):
            cells.append(dict(x0=x, sigma=s, w=DisturbanceSignal.zero(), dt=dts))
            meta.append((s, f"ext{i}", "zero", True))
    res = _run_cells(plant, filter_spec, u0, cells, base_cfg.dt, base_cfg.horizon,
                     base_cfg.escape_radius, workers)

    rows = []
    for (s, xid, wid, probe), r in zip(meta, res):
        rows.append(SweepRow(s, xid, wid, r.h_min, r.max_violation, _cell_verdict(r), r.settled,
                             probe, r.diverging, r.escaped, None if r.error is None else repr(r.error)))
    verdicts, probes = {}, {}
    for s in sigmas:
        vs = [r.verdict for r in rows if r.sigma == s and not r.probe]
        verdicts[s] = "inconclusive" if "inconclusive" in vs else ("safe" if all(v == "safe" for v in vs) else "unsafe")
        ps = [r.settled for r in rows if r.sigma == s and r.probe]
        probes[s] = all(ps) if ps else None
    return SweepReport(sigmas, rows, verdicts, probes, empirical_margin(sigmas, verdicts))


ENVELOPE_FREQUENCIES = (0.2, 1.0, 5.0)
ENVELOPE_SEEDS = (0, 1, 2, 3, 4)


def envelope_signals(amplitude: float, hold_time: float = 0.1) -> list[DisturbanceSignal]:
    """Constant +-a, three sinusoids and five seeded held-uniform signals."""
    a = float(amplitude)
    out = [DisturbanceSignal.constant(a), DisturbanceSignal.constant(-a)]
    out += [DisturbanceSignal.sinusoid(a, f) for f in ENVELOPE_FREQUENCIES]
    out += [DisturbanceSignal.seeded_bounded(a, s, hold_time) for s in ENVELOPE_SEEDS]
    return out


@dataclass(frozen=True)
class EnvelopeEntry:
    amplitude: float
    worst_violation: float
    n_cells: int
    n_errors: int
    n_escaped: int


def issf_envelope(plant: ControlAffinePlant, filter_spec: FilterSpec, u0: Callable,
                  amplitudes: Sequence[float], base_cfg: SimConfig, x0_set=None, *,
                  workers: int = 1, sigma: Optional[float] = None) -> list[EnvelopeEntry]:
    """Worst set violation per disturbance amplitude.

    ``x0_set`` defaults to ``base_cfg.x0``; the gain is ``base_cfg.sigma``
    unless ``sigma`` is given.
    """
    amps = [float(a) for a in amplitudes]
    if any(a < 0 for a in amps):
        raise SimConfigError("amplitudes", "must be >= 0")
    if any(b < a for a, b in zip(amps, amps[1:])):
        raise SimConfigError("amplitudes", "must be ascending")
    if not filter_spec.attenuates:
        warnings.warn("envelope requested for a filter without disturbance attenuation", stacklevel=2)
    n = plant.state_dim
    X0 = as_states(x0_set if x0_set is not None else [base_cfg.x0], n)
    s = base_cfg.sigma if sigma is None else float(sigma)
    cells, owner = [], []
    for j, a in enumerate(amps):
        for w in envelope_signals(a):
            for x in X0:
                cells.append(dict(x0=x, sigma=s, w=w))
                owner.append(j)
    res = _run_cells(plant, filter_spec, u0, cells, base_cfg.dt, base_cfg.horizon,
                     base_cfg.escape_radius, workers, refine_marginal=False)
    out = []
    for j, a in enumerate(amps):
        mine = [r for r, o in zip(res, owner) if o == j]
        ok = [r.max_violation for r in mine if r.error is None]
        out.append(EnvelopeEntry(a, float(max(ok)) if ok else float("nan"), len(mine),
                                 sum(r.error is not None for r in mine), sum(r.escaped for r in mine)))
    return out
