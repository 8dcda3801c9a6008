"""Potential-level Kähler-Ricci flow ``dphi/dt = log(rho_phi/rho0) + phi - h``.

The flow has an unstable gauge direction: if ``phi(t)`` solves it then so
does ``phi(t) + C e^t``.  The integrator therefore evolves the split
``phi = phi_hat + kappa`` where ``phi_hat`` has zero background mean and
``kappa`` is a scalar carried by the exact variation-of-constants formula
for ``kappa' = kappa + mean(u_hat)``.  Every gauge-invariant monitor is
computed from ``phi_hat`` alone; the gauge-dependent ones (``b``, ``ubar``,
``sup|u|``, ``a_t``) are reported after the run in the gauge fixed by
:func:`renormalize_c`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .functionals import (
    e1_energy,
    f_functional,
    jensen_gap_f,
    k_energy,
    u_statistics,
)
from .geometry import BackgroundGeometry, PotentialState, make_state

__all__ = [
    "FlowConfig",
    "FlowRecord",
    "FlowTrace",
    "CNormalization",
    "PerelmanCeilings",
    "StepRejected",
    "STEPPERS",
    "step",
    "run",
    "normalized_c",
    "renormalize_c",
    "perelman_diagnostics",
]

STEPPERS = ("semi-implicit", "rk4")

# L-stable ROS2 parameter
_GAMMA = 1.0 + 1.0 / math.sqrt(2.0)


class StepRejected(Exception):
    """Candidate step left the space of metrics or tripped the guard."""


@dataclass(frozen=True)
class FlowConfig:
    dt_init: float = 0.005
    dt_min: float = 1e-7
    dt_max: float = 0.005
    t_max: float = 30.0
    conv_tol: float = 1e-8
    snapshot_every: int = 100
    stepper: str = "semi-implicit"
    # reject a step if sup|u - mean u| moves by more than this
    guard_du: float = 0.5
    # reject a step if min(m)/max(m) falls below this
    min_margin: float = 1e-8

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.conv_tol <= 0:
            raise ValueError("conv_tol must be positive")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.stepper not in STEPPERS:
            raise ValueError(f"stepper must be one of {STEPPERS}")


@dataclass(frozen=True)
class FlowRecord:
    t: float
    nu: float
    F: float
    E1: float
    c: float
    c_norm: float
    b: float
    ubar: float
    f_gap: float
    eps: float
    sup_u: float
    sup_grad_u_sq: float
    sup_lap_u: float
    dt: float
    a_t: float
    sup_h: float


CSV_COLUMNS = (
    "t", "nu", "F", "E1", "c", "c_norm", "b", "ubar", "f_gap", "eps",
    "sup_u", "sup_grad_u_sq", "sup_lap_u", "dt",
)


@dataclass(frozen=True, eq=False)
class FlowTrace:
    records: tuple
    snapshots: tuple  # of (t, phi) in the normalized gauge
    termination: str  # converged | horizon | degenerate
    h_mean: float
    config: FlowConfig
    final_phi: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.records)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def t_end(self) -> float:
        return self.records[-1].t if self.records else 0.0


# --------------------------------------------------------------------------
# single steps


@dataclass
class _Eval:
    """Split state ``phi_hat`` with its velocity at ``kappa = 0``."""

    state: PotentialState
    u: np.ndarray  # velocity of phi_hat
    drift: np.ndarray  # u - background mean of u
    g: float  # background mean of u


def _evaluate(bg: BackgroundGeometry, phi_hat: np.ndarray, min_margin: float) -> _Eval:
    state = make_state(bg, phi_hat)
    m = state.mass
    if not state.is_valid or m.min() < min_margin * m.max():
        raise StepRejected("density lost positivity")
    u = state.log_ratio + phi_hat - bg.h
    if not np.all(np.isfinite(u)):
        raise StepRejected("non-finite velocity")
    g = bg.mean(u)
    return _Eval(state, u, u - g, g)


def _rk4(bg, cur: _Eval, tau: float, margin: float) -> np.ndarray:
    y = cur.state.phi
    k1 = cur.drift
    k2 = _evaluate(bg, y + 0.5 * tau * k1, margin).drift
    k3 = _evaluate(bg, y + 0.5 * tau * k2, margin).drift
    k4 = _evaluate(bg, y + tau * k3, margin).drift
    return y + tau * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _ros2(bg, cur: _Eval, tau: float, margin: float) -> np.ndarray:
    # Verwer et al. two-stage Rosenbrock-W scheme; Jacobian of the
    # projected velocity P (L/m + I)
    grid = bg.grid
    y = cur.state.phi
    a = grid.lap_sigma / cur.state.mass[:, None]
    a[np.diag_indices_from(a)] += 1.0
    e = grid.weights * bg.mass0 / bg.volume
    jac = a - np.outer(np.ones_like(e), e @ a)
    lu = lu_factor(np.eye(y.size) - _GAMMA * tau * jac)
    k1 = lu_solve(lu, cur.drift)
    f1 = _evaluate(bg, y + tau * k1, margin).drift
    k2 = lu_solve(lu, f1 - 2.0 * k1)
    return y + tau * (1.5 * k1 + 0.5 * k2)


def _stable_dt(bg: BackgroundGeometry, cur: _Eval) -> float:
    # RK4 stability interval on the negative axis is about 2.78
    return 2.7 / (bg.grid.lap_spectral_radius / cur.state.mass.min() + 1.0)


def _advance(bg, cur: _Eval, tau: float, cfg: FlowConfig) -> _Eval:
    if cfg.stepper == "rk4":
        phi_new = _rk4(bg, cur, tau, cfg.min_margin)
    else:
        phi_new = _ros2(bg, cur, tau, cfg.min_margin)
    # re-impose zero background mean lost to round-off
    phi_new = phi_new - bg.mean(phi_new)
    new = _evaluate(bg, phi_new, cfg.min_margin)
    if np.max(np.abs(new.drift - cur.drift)) > cfg.guard_du:
        raise StepRejected("velocity jump above guard")
    return new


def _advance_kappa(kappa: float, g_old: float, g_new: float, tau: float) -> float:
    grow = math.exp(tau)
    return grow * kappa + 0.5 * tau * (grow * g_old + g_new)


def step(
    bg: BackgroundGeometry,
    state: PotentialState,
    dt: float,
    stepper: str = "semi-implicit",
    guard_du: float = 0.5,
) -> PotentialState:
    """Advance ``state`` by one step of size ``dt``.

    Raises :class:`StepRejected` if the candidate is not a metric or the
    velocity jumps by more than ``guard_du``; the caller decides whether to
    retry with a smaller step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = FlowConfig(dt_init=dt, dt_min=dt, dt_max=dt, stepper=stepper, guard_du=guard_du)
    kappa = bg.mean(state.phi)
    cur = _evaluate(bg, state.phi - kappa, cfg.min_margin)
    if stepper == "rk4" and dt > _stable_dt(bg, cur):
        raise StepRejected("dt above the explicit stability limit")
    new = _advance(bg, cur, dt, cfg)
    kappa = _advance_kappa(kappa, cur.g, new.g, dt)
    return make_state(bg, new.state.phi + kappa, t=state.t + dt)


# --------------------------------------------------------------------------
# gauge normalization


@dataclass(frozen=True)
class CNormalization:
    t: np.ndarray
    c_norm: np.ndarray
    integral: float  # int_0^T c_norm dt
    bound: float  # nu(0) - nu(T), "nu at horizon" stands in for nu(inf)
    tail_bound: np.ndarray  # e^{-(T-t)} eps(T): truncation of the infinite horizon


def normalized_c(t, eps) -> np.ndarray:
    """``c(t) = int_t^T eps(tau) e^{-(tau - t)} dtau`` by backward recursion.

    ``eps`` is taken piecewise linear between samples and each panel is
    integrated exactly against the exponential kernel, so the result solves
    ``c' = c - eps`` with ``c(T) = 0`` to second order in the spacing.
    """
    t = np.asarray(t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    c = np.zeros_like(t)
    for i in range(t.size - 2, -1, -1):
        h = t[i + 1] - t[i]
        decay = math.exp(-h)
        one_minus = -math.expm1(-h)
        # int_0^h (e_i + (e_{i+1}-e_i) x/h) e^{-x} dx
        lin = (one_minus - h * decay) / h
        panel = eps[i] * one_minus + (eps[i + 1] - eps[i]) * lin
        c[i] = decay * c[i + 1] + panel
    return c


def renormalize_c(trace: FlowTrace) -> CNormalization:
    """Gauge normalization of the mean velocity over the run.

    The infinite-horizon normalization is replaced by the recorded horizon
    ``T = t_end``; ``tail_bound`` bounds the neglected tail assuming ``eps``
    stays below its final value.
    """
    t = trace.series("t")
    eps = trace.series("eps")
    nu = trace.series("nu")
    if t.size == 0:
        empty = np.zeros(0)
        return CNormalization(empty, empty, 0.0, 0.0, empty)
    c = normalized_c(t, eps)
    integral = float(np.trapezoid(c, t)) if t.size > 1 else 0.0
    tail = np.exp(-(t[-1] - t)) * eps[-1]
    return CNormalization(t, c, integral, float(nu[0] - nu[-1]), tail)


# --------------------------------------------------------------------------
# full runs


@dataclass
class _Raw:
    t: float
    dt: float
    nu: float
    F: float
    E1: float
    c_hat: float
    kappa: float
    u2: float  # int u_hat^2 m
    ubar_hat: float
    a_hat: float
    u_max: float
    u_min: float
    f_gap: float
    eps: float
    sup_grad_u_sq: float
    sup_lap_u: float
    sup_h: float


def _monitor(bg: BackgroundGeometry, cur: _Eval, t: float, dt: float, kappa: float) -> _Raw:
    st = replace(cur.state, t=t)
    stats = u_statistics(bg, st, cur.u)
    return _Raw(
        t=t,
        dt=dt,
        nu=k_energy(bg, st),
        F=f_functional(bg, st),
        E1=e1_energy(bg, st),
        c_hat=stats.c,
        kappa=kappa,
        u2=stats.b,
        ubar_hat=stats.ubar,
        a_hat=stats.a_t,
        u_max=float(cur.u.max()),
        u_min=float(cur.u.min()),
        f_gap=jensen_gap_f(st, cur.u),
        eps=stats.eps,
        sup_grad_u_sq=stats.sup_grad_u_sq,
        sup_lap_u=stats.sup_lap_u,
        sup_h=stats.sup_h,
    )


def run(bg: BackgroundGeometry, phi0, cfg: Optional[FlowConfig] = None) -> FlowTrace:
    """Integrate the flow from ``phi0`` until convergence, horizon or degeneracy.

    Every accepted state is recorded; the initial state is record 0.  A
    degenerate run keeps only the records of valid states.
    """
    cfg = cfg or FlowConfig()
    phi0 = np.asarray(phi0, dtype=float)
    kappa = bg.mean(phi0)
    try:
        cur = _evaluate(bg, phi0 - kappa, cfg.min_margin)
    except StepRejected:
        return FlowTrace((), (), "degenerate", bg.h_mean, cfg)

    raws: list[_Raw] = []
    snaps: list[tuple[int, np.ndarray]] = []
    t, dt, last_dt = 0.0, cfg.dt_init, 0.0
    termination = "horizon"
    while True:
        raws.append(_monitor(bg, cur, t, last_dt, kappa))
        if (len(raws) - 1) % cfg.snapshot_every == 0:
            snaps.append((len(raws) - 1, cur.state.phi))
        if raws[-1].sup_grad_u_sq < cfg.conv_tol:
            termination = "converged"
            break
        if t >= cfg.t_max * (1.0 - 1e-12):
            termination = "horizon"
            break
        if cfg.stepper == "rk4":
            dt = min(dt, _stable_dt(bg, cur))
        new = None
        while new is None:
            tau = min(dt, cfg.t_max - t)
            try:
                new = _advance(bg, cur, tau, cfg)
            except StepRejected:
                dt *= 0.5
                if dt < cfg.dt_min:
                    break
        if new is None:
            termination = "degenerate"
            break
        kappa = _advance_kappa(kappa, cur.g, new.g, tau)
        t += tau
        last_dt = tau
        cur = new
        dt = min(1.5 * dt, cfg.dt_max)

    if snaps[-1][0] != len(raws) - 1:
        snaps.append((len(raws) - 1, cur.state.phi))
    return _finish(bg, cfg, raws, snaps, termination)


def _finish(bg, cfg, raws, snaps, termination) -> FlowTrace:
    v = bg.volume
    t = np.array([r.t for r in raws])
    eps = np.array([r.eps for r in raws])
    c_norm = normalized_c(t, eps)
    records = []
    shifts = []
    for r, cn in zip(raws, c_norm):
        # normalized gauge: u = u_hat + delta with mean(u) = c_norm
        delta = cn - r.c_hat
        shifts.append(delta)
        records.append(
            FlowRecord(
                t=r.t,
                nu=r.nu,
                F=r.F,
                E1=r.E1,
                c=r.c_hat + r.kappa,
                c_norm=float(cn),
                b=r.u2 + 2.0 * delta * r.c_hat * v + delta**2 * v,
                ubar=r.ubar_hat + delta,
                f_gap=r.f_gap,
                eps=r.eps,
                sup_u=max(abs(r.u_max + delta), abs(r.u_min + delta)),
                sup_grad_u_sq=r.sup_grad_u_sq,
                sup_lap_u=r.sup_lap_u,
                dt=r.dt,
                a_t=r.a_hat + delta,
                sup_h=r.sup_h,
            )
        )
    snapshots = tuple((raws[i].t, phi + shifts[i]) for i, phi in snaps)
    return FlowTrace(
        records=tuple(records),
        snapshots=snapshots,
        termination=termination,
        h_mean=bg.h_mean,
        config=cfg,
        final_phi=snapshots[-1][1] if snapshots else None,
    )


# --------------------------------------------------------------------------
# measured uniform bounds


@dataclass(frozen=True)
class PerelmanCeilings:
    sup_h: float
    sup_grad_h_sq: float
    sup_lap_h: float
    t_attained: tuple
    plateau: bool

    def as_tuple(self):
        return (self.sup_h, self.sup_grad_h_sq, self.sup_lap_h)


def perelman_diagnostics(trace: FlowTrace) -> PerelmanCeilings:
    """Empirical ceilings of ``|h_t|``, ``|grad h_t|^2`` and ``|Delta h_t|``.

    ``h_t = -u + a_t`` differs from ``-u`` by a constant, so the gradient and
    Laplacian ceilings are those of the velocity.  ``plateau`` is true when
    none of the three series exceeds its earlier maximum over the last third
    of the run.
    """
    if len(trace) == 0:
        return PerelmanCeilings(0.0, 0.0, 0.0, (0.0, 0.0, 0.0), True)
    t = trace.series("t")
    cols = [trace.series(n) for n in ("sup_h", "sup_grad_u_sq", "sup_lap_u")]
    ceilings = [float(c.max()) for c in cols]
    attained = tuple(float(t[int(np.argmax(c))]) for c in cols)
    cut = int(np.ceil(2 * len(t) / 3))
    plateau = all(
        cut >= len(c) or c[cut:].max() <= c[:cut].max() * (1 + 1e-9) + 1e-14
        for c in cols
    )
    return PerelmanCeilings(*ceilings, attained, plateau)
