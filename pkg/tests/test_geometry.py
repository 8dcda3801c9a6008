import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from krflow.analysis import bump
from krflow.geometry import (
    GridError,
    MetricDegenerateError,
    ProfileError,
    ddbar_density,
    density,
    grad_norm_sq,
    laplacian,
    make_background,
    make_grid,
    make_state,
    perturbed_profile,
    ricci_mass,
    ricci_potential,
    ricci_residual,
    sampled_profile,
    scalar_curvature,
)

x = sp.Symbol("x", real=True)
s = sp.Symbol("s", real=True)
Q = (1 - x**2) / 2


def test_grid_shape_and_order():
    g = make_grid(64)
    assert g.n == 64
    assert np.all(np.diff(g.sigma) > 0)
    assert -1 < g.sigma[0] and g.sigma[-1] < 1
    assert np.allclose(g.q, 0.5 * (1 - g.sigma**2))


def test_grid_rejects_tiny():
    with pytest.raises(GridError):
        make_grid(8)


@pytest.mark.parametrize("deg", range(0, 60, 7))
def test_quadrature_exact_on_monomials(deg):
    g = make_grid(64)
    exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
    assert g.integrate(g.sigma**deg) == pytest.approx(exact, abs=1e-14)


def test_derivative_kills_constants():
    g = make_grid(128)
    assert np.max(np.abs(g.d_sigma @ np.ones(g.n))) < 1e-10
    assert np.max(np.abs(g.lap_sigma @ np.ones(g.n))) < 1e-10


def test_derivative_of_polynomial():
    g = make_grid(48)
    f = g.sigma**5 - 2 * g.sigma**2
    assert np.allclose(g.d_sigma @ f, 5 * g.sigma**4 - 4 * g.sigma, atol=1e-11)


def test_cylinder_derivatives_match_sympy():
    g = make_grid(96)
    f = sp.sin(2 * x) + x**3
    df = sp.lambdify(x, sp.diff(f, x) * Q)
    d2f = sp.lambdify(x, Q * sp.diff(Q * sp.diff(f, x), x))
    vals = sp.lambdify(x, f)(g.sigma)
    assert np.allclose(g.d_s @ vals, df(g.sigma), atol=1e-11)
    assert np.allclose(g.d_s2 @ vals, d2f(g.sigma), atol=1e-10)


def test_round_laplacian_and_gradient_of_sigma(round_bg):
    st = make_state(round_bg, np.zeros(round_bg.grid.n))
    sig = round_bg.grid.sigma
    lap_oracle = sp.lambdify(x, sp.diff(Q * sp.diff(x, x), x))(sig)
    assert np.allclose(laplacian(st, sig), lap_oracle, atol=1e-10)
    assert np.allclose(laplacian(st, sig), -sig, atol=1e-10)
    assert np.allclose(grad_norm_sq(st, sig), round_bg.grid.q, atol=1e-12)


def test_bump_density_matches_sympy(round_bg):
    g = round_bg.grid
    f = sp.Rational(1, 2) * sp.cos(sp.pi * x / 2)
    mass = sp.lambdify(x, 1 + sp.diff(Q * sp.diff(0.3 * f, x), x))(g.sigma)
    st = make_state(round_bg, 0.3 * bump(g.sigma))
    assert np.allclose(st.mass, mass, atol=1e-10)
    assert np.allclose(density(round_bg, 0.3 * bump(g.sigma)), g.q * mass, atol=1e-10)


def test_volume_is_class_value(perturbed_bg):
    prof = perturbed_profile(0.1)

    def m0(t):
        t = np.array([t])
        return (1 + 0.5 * (1 - t**2) * prof.d2psi(t) - t * prof.dpsi(t))[0]

    assert quad(m0, -1, 1)[0] == pytest.approx(2.0, abs=1e-13)
    assert perturbed_bg.volume == pytest.approx(2.0, abs=1e-12)


def test_round_ricci_potential_vanishes(round_bg):
    assert np.max(np.abs(round_bg.h)) < 1e-10
    assert round_bg.h_mean == pytest.approx(0.0, abs=1e-12)


def test_ricci_potential_matches_cylinder_formula(perturbed_bg):
    # h = -log rho0 + s - Phi0 + c, built symbolically in s
    eps = perturbed_bg.profile.params["eps"]
    sig = sp.tanh(s / 2)
    phi0 = 2 * sp.log(1 + sp.exp(s)) + eps * (sig**2 + sig**3)
    rho0 = sp.diff(phi0, s, 2)
    h_raw = sp.lambdify(s, -sp.log(rho0) + s - phi0)
    # e^{h_raw} rho0 = e^{s - Phi0}, which avoids cancellation in rho0
    weight = sp.lambdify(s, sp.exp(s - phi0))
    norm = quad(weight, -60, 60, limit=200, epsabs=1e-15)[0]
    c = np.log(2.0) - np.log(norm)
    nodes = perturbed_bg.grid.s
    inner = np.abs(nodes) < 8
    assert np.allclose(perturbed_bg.h[inner], h_raw(nodes[inner]) + c, atol=1e-9)


def test_ricci_potential_normalization(perturbed_bg):
    g = perturbed_bg.grid
    assert g.integrate((np.exp(perturbed_bg.h) - 1) * perturbed_bg.mass0) == pytest.approx(0, abs=1e-13)
    assert perturbed_bg.h_mean < 0


def test_ricci_potential_defining_equation(perturbed_bg):
    assert ricci_residual(perturbed_bg) < 1e-9


def test_ricci_potential_rejects_degenerate_density():
    g = make_grid(32)
    with pytest.raises(MetricDegenerateError):
        ricci_potential(g, np.zeros(32), -g.q)


def test_round_scalar_curvature_is_one(round_bg):
    st = make_state(round_bg, np.zeros(round_bg.grid.n))
    assert np.max(np.abs(scalar_curvature(st) - 1.0)) < 1e-8


def test_average_scalar_curvature_is_one(random_states):
    for st in random_states:
        g = st.grid
        rbar = g.integrate(scalar_curvature(st) * st.mass) / st.volume
        assert rbar == pytest.approx(1.0, abs=1e-10)
        assert g.integrate(ricci_mass(g, st.mass)) == pytest.approx(2.0, abs=1e-10)


def test_state_volume_is_preserved(random_states):
    for st in random_states:
        assert st.volume == pytest.approx(2.0, abs=1e-10)


def test_integration_by_parts(random_states):
    rng = np.random.default_rng(7)
    for st in random_states:
        g = st.grid
        f = np.polynomial.chebyshev.chebval(g.sigma, rng.normal(size=6))
        lhs = g.integrate(f * laplacian(st, f) * st.mass)
        rhs = -g.integrate(grad_norm_sq(st, f) * st.mass)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-11)


def test_ddbar_density_of_smooth_function():
    g = make_grid(64)
    assert np.allclose(ddbar_density(g, g.sigma), -g.sigma * g.q, atol=1e-11)


def test_ddbar_density_of_global_potential(perturbed_bg):
    got = ddbar_density(perturbed_bg.grid, perturbed_bg.phi0, kahler_class=1.0)
    assert np.allclose(got, perturbed_bg.rho0, atol=1e-11)


def test_sampled_profile_reproduces_builtin():
    fine = make_grid(128)
    prof = perturbed_profile(0.1)
    bg_file = make_background(64, sampled_profile(fine.sigma, prof.psi(fine.sigma)))
    bg_ref = make_background(64, prof)
    assert np.allclose(bg_file.mass0, bg_ref.mass0, atol=1e-10)
    assert np.allclose(bg_file.h, bg_ref.h, atol=1e-10)


def test_sampled_profile_domain_mismatch():
    coarse = np.linspace(-0.5, 0.5, 9)
    with pytest.raises(ProfileError):
        make_background(32, sampled_profile(coarse, coarse**2))


def test_background_must_be_positive():
    with pytest.raises(ProfileError):
        make_background(64, "perturbed:5")


def test_unknown_background_name():
    with pytest.raises(ProfileError):
        make_background(32, "sphere")


def test_invalid_state_flags():
    bg = make_background(64)
    st = make_state(bg, 50 * bump(bg.grid.sigma))
    assert not st.is_valid
    with pytest.raises(MetricDegenerateError):
        laplacian(st, bg.grid.sigma)


def test_state_shape_mismatch(round_bg):
    with pytest.raises(ValueError):
        make_state(round_bg, np.zeros(10))


def test_sampled_profile_equispaced_samples():
    x = np.linspace(-1, 1, 81)
    prof = sampled_profile(x, 0.05 * x**2)
    g = make_grid(64)
    assert np.allclose(prof.psi(g.sigma), 0.05 * g.sigma**2, atol=1e-6)
