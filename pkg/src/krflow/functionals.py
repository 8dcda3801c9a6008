"""Energy functionals and flow monitors on the reduced CP^1 geometry.

All functionals are specialized to complex dimension one, where the
gradient sums collapse to a single term:

* K-energy ``nu = (1/V) int L rho_phi + (1/V) int h (rho0 - rho_phi)
  - (1/2V) int phi'(s)^2 ds``
* F-functional ``F = (1/2V) int phi'^2 ds - (1/V) int phi rho0
  - log((1/V) int e^{h - phi} rho0)``
* Chen-Tian ``E_1 = (1/V) int (L - h)(r_phi + rho_phi) + (1/V) int h (r_0 + rho0)``

with ``L = log(rho_phi / rho0)`` and ``r`` the reduced Ricci density.  The
general ``E_k`` has no further members on a Riemann surface.  Exponential
integrals go through :func:`scipy.special.logsumexp`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .geometry import (
    BackgroundGeometry,
    PotentialState,
    _centered,
    make_state,
    require_valid,
    ricci_mass,
)

__all__ = [
    "FunctionalReport",
    "UStatistics",
    "velocity",
    "k_energy",
    "k_energy_path",
    "f_functional",
    "nu_minus_f",
    "e1_energy",
    "jensen_gap_f",
    "u_statistics",
    "evaluate",
    "log_mean_exp",
]


def log_mean_exp(state: PotentialState, f: np.ndarray, mass=None) -> float:
    """``log((1/V) int e^f m dsigma)`` without overflow."""
    mass = state.mass if mass is None else mass
    grid = state.grid
    return float(logsumexp(f, b=grid.weights * mass) - np.log(grid.integrate(mass)))


def _mean(state: PotentialState, f: np.ndarray) -> float:
    return state.grid.integrate(f * state.mass) / state.volume


def velocity(bg: BackgroundGeometry, state: PotentialState) -> np.ndarray:
    """Flow velocity ``u = log(rho_phi/rho0) + phi - h``."""
    require_valid(state)
    return state.log_ratio + state.phi - bg.h


def _dirichlet(state: PotentialState, f: np.ndarray) -> float:
    # int f'(s)^2 ds
    grid = state.grid
    df = grid.d_sigma @ _centered(f)
    return grid.integrate(grid.q * df**2)


def k_energy(bg: BackgroundGeometry, state: PotentialState) -> float:
    """Closed-form K-energy of ``state`` relative to the background."""
    require_valid(state)
    grid, v = bg.grid, bg.volume
    entropy = grid.integrate(state.log_ratio * state.mass)
    shift = grid.integrate(bg.h * (bg.mass0 - state.mass))
    return (entropy + shift - 0.5 * _dirichlet(state, state.phi)) / v


def k_energy_path(bg: BackgroundGeometry, state: PotentialState, steps: int = 24) -> float:
    """K-energy by integrating its first variation along ``t -> t*phi``.

    Uses ``steps``-point Gauss-Legendre in ``t``; each node evaluates the
    scalar curvature of the intermediate metric.  Independent of the closed
    form in :func:`k_energy`.
    """
    require_valid(state)
    grid, v = bg.grid, bg.volume
    nodes, wts = np.polynomial.legendre.leggauss(steps)
    nodes = 0.5 * (nodes + 1.0)
    wts = 0.5 * wts
    total = 0.0
    for tk, wk in zip(nodes, wts):
        mid = make_state(bg, tk * state.phi)
        require_valid(mid)
        # R_t m_t is the Ricci sigma-density
        ric = ricci_mass(grid, mid.mass)
        rbar = grid.integrate(ric) / mid.volume
        total += wk * grid.integrate(state.phi * (ric - rbar * mid.mass))
    return -total / v


def f_functional(bg: BackgroundGeometry, state: PotentialState) -> float:
    """Ding-Tian F-functional."""
    require_valid(state)
    grid, v = bg.grid, bg.volume
    lme = float(logsumexp(bg.h - state.phi, b=grid.weights * bg.mass0) - np.log(v))
    return (
        0.5 * _dirichlet(state, state.phi) / v
        - grid.integrate(state.phi * bg.mass0) / v
        - lme
    )


def jensen_gap_f(state: PotentialState, u) -> float:
    """``(1/V) int u rho_phi + log((1/V) int e^{-u} rho_phi)``; zero iff u is constant."""
    u = np.asarray(u, dtype=float)
    # subtracting the mean keeps the two terms from cancelling catastrophically
    ubar = _mean(state, u)
    return log_mean_exp(state, -(u - ubar)) + (_mean(state, u - ubar))


def nu_minus_f(bg: BackgroundGeometry, state: PotentialState, u=None) -> float:
    """``nu - F`` through the velocity ``u``."""
    if u is None:
        u = velocity(bg, state)
    return jensen_gap_f(state, u) + bg.h_mean


def e1_energy(bg: BackgroundGeometry, state: PotentialState) -> float:
    """Chen-Tian ``E_1`` (the ``n - k`` path term vanishes on a curve)."""
    require_valid(state)
    grid, v = bg.grid, bg.volume
    ric = ricci_mass(grid, state.mass)
    ric0 = ricci_mass(grid, bg.mass0)
    first = grid.integrate((state.log_ratio - bg.h) * (ric + state.mass))
    second = grid.integrate(bg.h * (ric0 + bg.mass0))
    return (first + second) / v


@dataclass(frozen=True)
class UStatistics:
    c: float
    b: float
    ubar: float
    a_t: float
    sup_u: float
    sup_grad_u_sq: float
    sup_lap_u: float
    # sup |h_t| with h_t = -u + a_t
    sup_h: float
    eps: float


def u_statistics(bg: BackgroundGeometry, state: PotentialState, u=None) -> UStatistics:
    """Statistics of the flow velocity used throughout the convergence argument.

    ``a_t = -log((1/V) int e^{-u} rho_phi)`` makes ``h_t = -u + a_t`` satisfy
    ``int e^{h_t} rho_phi = V``.
    """
    require_valid(state)
    if u is None:
        u = velocity(bg, state)
    u = np.asarray(u, dtype=float)
    grid = state.grid
    v = state.volume
    c = _mean(state, u)
    b = grid.integrate(u**2 * state.mass)
    a_t = -log_mean_exp(state, -u)
    h_t = -u + a_t
    ubar = grid.integrate(u * np.exp(h_t) * state.mass) / v
    du = grid.d_sigma @ _centered(u)
    grad_sq = grid.q * du**2 / state.mass
    lap = (grid.lap_sigma @ _centered(u)) / state.mass
    eps = grid.integrate(grid.q * du**2) / v
    return UStatistics(
        c=c,
        b=b,
        ubar=ubar,
        a_t=a_t,
        sup_u=float(np.max(np.abs(u))),
        sup_grad_u_sq=float(grad_sq.max()),
        sup_lap_u=float(np.max(np.abs(lap))),
        sup_h=float(np.max(np.abs(h_t))),
        eps=eps,
    )


@dataclass(frozen=True)
class FunctionalReport:
    nu: float
    F: float
    E1: float
    gap: float
    f_gap: float
    stats: UStatistics


def evaluate(bg: BackgroundGeometry, state: PotentialState) -> FunctionalReport:
    """Every functional and monitor at one state."""
    u = velocity(bg, state)
    nu = k_energy(bg, state)
    F = f_functional(bg, state)
    return FunctionalReport(
        nu=nu,
        F=F,
        E1=e1_energy(bg, state),
        gap=nu - F - bg.h_mean,
        f_gap=jensen_gap_f(state, u),
        stats=u_statistics(bg, state, u),
    )
