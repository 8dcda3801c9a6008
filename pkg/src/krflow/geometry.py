"""Reduced geometry of S^1-invariant Kähler metrics on CP^1.

An invariant Kähler form is ``i ddbar Phi(s)`` with ``s = log|z|^2``; its
reduced density is ``rho = Phi''(s)``.  Everything here lives on the
compactified coordinate ``sigma = tanh(s/2)`` in ``(-1, 1)``, where smooth
invariant functions on CP^1 are exactly the smooth functions of ``sigma`` on
the closed interval.  With ``q(sigma) = (1 - sigma^2)/2 = dsigma/ds`` we have

* ``d/ds = q d/dsigma``
* ``rho ds = m dsigma`` with ``m = rho / q`` (the sigma-density)
* the round metric ``Phi = 2 log(1 + e^s)`` has ``m == 1``.

Internally all integrals are taken against ``dsigma`` with the sigma-density
``m``; the s-space quantities (``rho``, ``d/ds`` operators) are exposed for
callers that think in the cylinder coordinate.  The common angular factor is
dropped from every integral, so ``V = 2`` for the class ``2 pi c_1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "GridError",
    "MetricDegenerateError",
    "ProfileError",
    "ReducedGrid",
    "Profile",
    "BackgroundGeometry",
    "PotentialState",
    "make_grid",
    "make_background",
    "make_state",
    "round_profile",
    "perturbed_profile",
    "sampled_profile",
    "density",
    "laplacian",
    "grad_norm_sq",
    "ricci_potential",
    "scalar_curvature",
    "ddbar_density",
    "ricci_mass",
    "ricci_residual",
    "require_valid",
]

MIN_NODES = 16


class GridError(ValueError):
    """Grid cannot represent the requested geometry."""


class ProfileError(ValueError):
    """Background profile does not define a Kähler metric."""


class MetricDegenerateError(ValueError):
    """Density is not strictly positive at every node."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _fejer_weights(theta: np.ndarray) -> np.ndarray:
    # Fejér's first rule on the Chebyshev roots cos(theta_k).
    n = theta.size
    j = np.arange(1, n // 2 + 1)
    terms = np.cos(2.0 * np.outer(theta, j)) / (4.0 * j**2 - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * terms.sum(axis=1))


def _diff_matrix(x: np.ndarray, bary: np.ndarray) -> np.ndarray:
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    d = (bary[None, :] / bary[:, None]) / dx
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


@dataclass(frozen=True, eq=False)
class ReducedGrid:
    """Chebyshev-root collocation grid on the compactified coordinate.

    Attributes
    ----------
    sigma : ndarray
        Nodes, strictly increasing in ``(-1, 1)``.
    weights : ndarray
        Fejér quadrature weights for ``dsigma``; exact for polynomials of
        degree ``N - 1``.
    q : ndarray
        Chain-rule factor ``dsigma/ds = (1 - sigma^2)/2`` at the nodes.
    d_sigma : ndarray
        Spectral first derivative in ``sigma``.
    lap_sigma : ndarray
        The weighted operator ``f -> d/dsigma(q df/dsigma)``.  For any
        invariant metric with sigma-density ``m`` the Laplacian is
        ``lap_sigma f / m``.
    """

    sigma: np.ndarray
    weights: np.ndarray
    q: np.ndarray
    d_sigma: np.ndarray
    lap_sigma: np.ndarray

    @property
    def n(self) -> int:
        return self.sigma.size

    @cached_property
    def s(self) -> np.ndarray:
        return _frozen(2.0 * np.arctanh(self.sigma))

    @cached_property
    def d_s(self) -> np.ndarray:
        """First derivative in the cylinder coordinate s."""
        return _frozen(self.q[:, None] * self.d_sigma)

    @cached_property
    def d_s2(self) -> np.ndarray:
        """Second derivative in the cylinder coordinate s."""
        return _frozen(self.q[:, None] * self.lap_sigma)

    @cached_property
    def lap_spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.lap_sigma))))

    def integrate(self, f: np.ndarray) -> float:
        """Integral of node samples against ``dsigma``."""
        return float(self.weights @ f)

    def interpolate(self, x: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Resample values given at nodes ``x`` onto this grid."""
        x = np.asarray(x, dtype=float)
        return _interpolator(x, np.asarray(values, dtype=float))(self.sigma)


def make_grid(n: int) -> ReducedGrid:
    """Build an ``n``-node grid on the Chebyshev roots."""
    if n < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} nodes, got {n}")
    k = np.arange(n)
    # increasing order: theta runs from pi down to 0
    theta = (2 * (n - 1 - k) + 1) * np.pi / (2 * n)
    x = np.cos(theta)
    bary = (-1.0) ** k * np.sin(theta)
    d = _diff_matrix(x, bary)
    q = 0.5 * (1.0 - x**2)
    lap = d @ (q[:, None] * d)
    np.fill_diagonal(lap, 0.0)
    np.fill_diagonal(lap, -lap.sum(axis=1))
    return ReducedGrid(
        sigma=_frozen(x),
        weights=_frozen(_fejer_weights(theta)),
        q=_frozen(q),
        d_sigma=_frozen(d),
        lap_sigma=_frozen(lap),
    )


# --------------------------------------------------------------------------
# background profiles

Func = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Profile:
    """Smooth perturbation ``psi(sigma)`` of the round potential.

    The background potential is ``Phi0 = 2 log(1 + e^s) + psi``.  When the
    first two sigma-derivatives are supplied the background density is
    evaluated analytically, otherwise by the grid's spectral operators.
    """

    name: str
    psi: Func
    dpsi: Optional[Func] = None
    d2psi: Optional[Func] = None
    params: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


def round_profile() -> Profile:
    zero = np.zeros_like
    return Profile("round", zero, zero, zero)


def perturbed_profile(eps: float = 0.1) -> Profile:
    """Asymmetric polynomial perturbation ``eps (sigma^2 + sigma^3)``."""
    return Profile(
        "perturbed",
        lambda x: eps * (x**2 + x**3),
        lambda x: eps * (2 * x + 3 * x**2),
        lambda x: eps * (2 + 6 * x),
        {"eps": eps},
    )


def _interpolator(sigma: np.ndarray, values: np.ndarray):
    """Global polynomial interpolant when the nodes allow it, else a cubic spline.

    Polynomial interpolation through many equispaced samples is useless
    (Runge); the spread of the barycentric weights detects that case.
    """
    from scipy.interpolate import BarycentricInterpolator, CubicSpline

    diff = np.abs(sigma[:, None] - sigma[None, :])
    np.fill_diagonal(diff, 1.0)
    log_w = -np.log(diff).sum(axis=1)
    if np.ptp(log_w) < np.log(1e8):
        return BarycentricInterpolator(sigma, values)
    order = np.argsort(sigma)
    return CubicSpline(sigma[order], values[order])


def sampled_profile(sigma, values, name: str = "file") -> Profile:
    """Profile given by samples, resampled onto the grid on demand."""
    sigma = np.asarray(sigma, dtype=float)
    values = np.asarray(values, dtype=float)
    if sigma.ndim != 1 or sigma.shape != values.shape or sigma.size < 2:
        raise ProfileError("sigma and values must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(values))):
        raise ProfileError("profile samples must be finite")
    if sigma.min() < -1.0 or sigma.max() > 1.0:
        raise ProfileError("profile nodes must lie in [-1, 1]")
    interp = _interpolator(sigma, values)
    lo, hi = float(sigma.min()), float(sigma.max())

    def psi(x):
        if x.min() < lo or x.max() > hi:
            raise ProfileError(
                f"profile covers [{lo:.6g}, {hi:.6g}] but grid needs "
                f"[{x.min():.6g}, {x.max():.6g}]"
            )
        return interp(x)

    return Profile(name, psi, params={"samples": int(sigma.size)})


# --------------------------------------------------------------------------
# geometry value types


@dataclass(frozen=True, eq=False)
class BackgroundGeometry:
    """Reference metric ``omega`` with its Ricci potential.

    ``mass0`` is the sigma-density of ``omega`` and ``rho0 = q * mass0`` its
    s-density.  ``h`` is normalized so that ``int (e^h - 1) rho0 ds = 0``.
    """

    grid: ReducedGrid
    profile: Profile
    psi: np.ndarray
    phi0: np.ndarray
    mass0: np.ndarray
    rho0: np.ndarray
    volume: float
    h: np.ndarray

    @property
    def h_mean(self) -> float:
        """``(1/V) int h rho0 ds``; never positive."""
        return self.grid.integrate(self.h * self.mass0) / self.volume

    def mean(self, f: np.ndarray) -> float:
        """Average of ``f`` against the background volume form."""
        return self.grid.integrate(f * self.mass0) / self.volume


@dataclass(frozen=True, eq=False)
class PotentialState:
    """Relative potential ``phi`` with cached densities of ``omega_phi``."""

    grid: ReducedGrid
    phi: np.ndarray
    mass: np.ndarray
    log_ratio: np.ndarray
    t: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return self.grid.q * self.mass

    @property
    def is_valid(self) -> bool:
        return bool(np.all(self.mass > 0.0) and np.all(np.isfinite(self.mass)))

    @property
    def volume(self) -> float:
        return self.grid.integrate(self.mass)


def _centered(f) -> np.ndarray:
    # differentiation matrices annihilate constants only to ~N^4 eps;
    # removing the mean first makes every derivative shift-invariant
    f = np.asarray(f, dtype=float)
    return f - f.mean()


def _round_phi0(sigma: np.ndarray) -> np.ndarray:
    # 2 log(1 + e^s) written in sigma
    return 2.0 * np.log(2.0 / (1.0 - sigma))


def make_background(
    n: int = 256,
    profile: Union[str, Profile] = "round",
    volume_tol: float = 1e-8,
) -> BackgroundGeometry:
    """Build the reference geometry on an ``n``-node grid.

    ``profile`` is ``"round"``, ``"perturbed"`` (optionally
    ``"perturbed:EPS"``) or a :class:`Profile`.
    """
    grid = make_grid(n)
    if isinstance(profile, str):
        name, _, arg = profile.partition(":")
        if name == "round" and not arg:
            profile = round_profile()
        elif name == "perturbed":
            profile = perturbed_profile(float(arg) if arg else 0.1)
        else:
            raise ProfileError(f"unknown background profile {profile!r}")
    x = grid.sigma
    psi = np.asarray(profile.psi(x), dtype=float)
    if not np.all(np.isfinite(psi)):
        raise ProfileError("profile is not finite on the grid")
    if profile.dpsi is not None and profile.d2psi is not None:
        mass0 = 1.0 + grid.q * profile.d2psi(x) - x * profile.dpsi(x)
    else:
        mass0 = 1.0 + grid.lap_sigma @ _centered(psi)
    if np.any(mass0 <= 0.0):
        raise ProfileError(
            f"background density is not positive (min {mass0.min():.3g})"
        )
    volume = grid.integrate(mass0)
    if abs(volume - 2.0) > volume_tol:
        raise GridError(
            f"volume {volume!r} misses the class value 2; grid too coarse for profile"
        )
    phi0 = _round_phi0(x) + psi
    rho0 = grid.q * mass0
    h = ricci_potential(grid, phi0, rho0)
    return BackgroundGeometry(
        grid=grid,
        profile=profile,
        psi=_frozen(psi),
        phi0=_frozen(phi0),
        mass0=_frozen(mass0),
        rho0=_frozen(rho0),
        volume=volume,
        h=_frozen(h),
    )


def make_state(bg: BackgroundGeometry, phi, t: float = 0.0) -> PotentialState:
    """Wrap samples of a relative potential; validity is not enforced."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != bg.grid.sigma.shape:
        raise ValueError(f"phi has shape {phi.shape}, grid has {bg.grid.n} nodes")
    mass = bg.mass0 + bg.grid.lap_sigma @ _centered(phi)
    with np.errstate(invalid="ignore", divide="ignore"):
        log_ratio = np.log(mass / bg.mass0)
    return PotentialState(bg.grid, _frozen(phi), _frozen(mass), _frozen(log_ratio), float(t))


def require_valid(state: PotentialState) -> None:
    if not state.is_valid:
        raise MetricDegenerateError(
            f"density not positive (min {np.nanmin(state.mass):.3g}) at t={state.t}"
        )


# --------------------------------------------------------------------------
# operators


def density(bg: BackgroundGeometry, phi) -> np.ndarray:
    """Reduced density ``rho_phi = rho0 + phi''(s)``; positivity is not checked."""
    return bg.rho0 + bg.grid.d_s2 @ _centered(phi)


def laplacian(state: PotentialState, f) -> np.ndarray:
    """``Delta_phi f = f''(s) / rho_phi``."""
    require_valid(state)
    return (state.grid.lap_sigma @ _centered(f)) / state.mass


def grad_norm_sq(state: PotentialState, f) -> np.ndarray:
    """``|grad f|^2_phi = f'(s)^2 / rho_phi``."""
    require_valid(state)
    df = state.grid.d_sigma @ _centered(f)
    return state.grid.q * df**2 / state.mass


def ricci_potential(grid: ReducedGrid, phi0, rho0) -> np.ndarray:
    """Ricci potential of ``i ddbar Phi0`` with reduced density ``rho0``.

    ``h = -log(rho0 e^{-s}) - Phi0 + c``; ``c`` is the exact root of
    ``int e^{h + c} rho0 ds = V``.
    """
    phi0 = np.asarray(phi0, dtype=float)
    rho0 = np.asarray(rho0, dtype=float)
    if np.any(rho0 <= 0.0):
        raise MetricDegenerateError("Ricci potential needs a positive density")
    mass0 = rho0 / grid.q
    # -log(rho0) + s - Phi0 == -log(mass0) - (Phi0 - Phi_round) - log 2 exactly;
    # the right side avoids cancelling O(log N) terms near the poles
    h = -np.log(mass0) - (phi0 - _round_phi0(grid.sigma))
    volume = grid.integrate(mass0)
    c = np.log(volume) - logsumexp(h, b=grid.weights * mass0)
    return h + c


def ricci_residual(bg: BackgroundGeometry) -> float:
    """Sup-norm of ``h'' + (log(rho0 e^{-s}))'' + rho0`` on the grid."""
    grid = bg.grid
    # (log(rho0 e^{-s}))'' = q * (lap_sigma log m0 - 1)
    lhs = grid.d_s2 @ _centered(bg.h) + grid.d_s2 @ _centered(np.log(bg.mass0)) - grid.q
    return float(np.max(np.abs(lhs + bg.rho0)))


def ricci_mass(grid: ReducedGrid, mass) -> np.ndarray:
    """Sigma-density of the Ricci form of a metric with sigma-density ``mass``."""
    return 1.0 - grid.lap_sigma @ _centered(np.log(mass))


def scalar_curvature(state: PotentialState) -> np.ndarray:
    """``R = -(log(rho e^{-s}))'' / rho``; the round metric has ``R == 1``."""
    require_valid(state)
    return ricci_mass(state.grid, state.mass) / state.mass


def ddbar_density(grid: ReducedGrid, f, kahler_class: float = 0.0) -> np.ndarray:
    """Reduced s-density of ``i ddbar f``, i.e. ``f''(s)``.

    Global potentials such as ``Phi0`` grow logarithmically at the poles and
    cannot be differentiated from samples.  Pass the multiple of the round
    potential they contain as ``kahler_class``; that part is differentiated
    in closed form and only the smooth remainder goes through the grid.
    """
    f = np.asarray(f, dtype=float)
    if kahler_class:
        f = f - kahler_class * _round_phi0(grid.sigma)
    return grid.d_s2 @ _centered(f) + kahler_class * grid.q
