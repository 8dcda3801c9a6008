import numpy as np
import pytest

from krflow.analysis import bump
from krflow.flow import FlowConfig, run
from krflow.geometry import Profile, make_background, make_state


def random_phi(bg, rng, scale=0.3):
    """Smooth random potential whose metric stays well inside the positive cone."""
    sigma = bg.grid.sigma
    k = np.arange(8)
    coef = rng.normal(size=k.size) / (1.0 + k) ** 2
    phi = np.polynomial.chebyshev.chebval(sigma, coef)
    lap = bg.grid.lap_sigma @ (phi - phi.mean())
    # keep m >= (1 - scale) * m0
    worst = np.max(-lap / bg.mass0)
    if worst > 0:
        phi *= scale / worst
    return phi + rng.normal()


def ridge_profile(a=0.02, delta=0.05):
    """Analytic but sharply curved perturbation, resolved only at large N."""
    def psi(x):
        return a * np.sqrt(x**2 + delta**2)

    def dpsi(x):
        return a * x / np.sqrt(x**2 + delta**2)

    def d2psi(x):
        return a * delta**2 / (x**2 + delta**2) ** 1.5

    return Profile("ridge", psi, dpsi, d2psi, {"a": a, "delta": delta})


@pytest.fixture(scope="session")
def round_bg():
    return make_background(256, "round")


@pytest.fixture(scope="session")
def perturbed_bg():
    return make_background(256, "perturbed")


@pytest.fixture(scope="session")
def small_bg():
    return make_background(64, "perturbed")


@pytest.fixture(scope="session")
def random_states(perturbed_bg):
    rng = np.random.default_rng(2024)
    states = []
    for _ in range(20):
        st = make_state(perturbed_bg, random_phi(perturbed_bg, rng))
        assert st.is_valid
        states.append(st)
    return states


@pytest.fixture(scope="session")
def flagship(round_bg):
    return run(round_bg, 0.3 * bump(round_bg.grid.sigma), FlowConfig(t_max=30.0))


@pytest.fixture(scope="session")
def perturbed_trace(small_bg):
    return run(small_bg, 0.3 * bump(small_bg.grid.sigma), FlowConfig(t_max=30.0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
