"""Multi-run experiments: the inf F / inf nu certificate and bound ledgers."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .flow import FlowConfig, FlowTrace, perelman_diagnostics, run
from .geometry import (
    BackgroundGeometry,
    PotentialState,
    require_valid,
    ricci_potential,
)

__all__ = [
    "bump",
    "default_family",
    "CertificateRow",
    "CertificateReport",
    "certify_theorem",
    "inequality_margins",
    "PoincareSummary",
    "poincare_suite",
    "random_test_functions",
    "BoundRow",
    "BoundLedger",
    "bound_ledger",
]

DEFAULT_AMPLITUDES = (0.1, -0.1, 0.3, -0.3, 0.6)


def bump(sigma) -> np.ndarray:
    """Fixed smooth even profile used for initial potentials."""
    return 0.5 * np.cos(0.5 * np.pi * np.asarray(sigma))


def default_family(bg: BackgroundGeometry, amplitudes=DEFAULT_AMPLITUDES):
    return [(f"bump:{a:g}", a * bump(bg.grid.sigma)) for a in amplitudes]


# --------------------------------------------------------------------------
# certificate


@dataclass(frozen=True)
class CertificateRow:
    label: str
    valid: bool
    converged: bool
    termination: str
    t_end: float
    F0: float
    nu0: float
    nu_end: float
    F_end: float
    f_gap_best: float
    # min over records of nu - F - (1/V) int h rho0
    jensen_margin: float
    # min over pairs s < t of F(0) - [-f(t) + nu(s) - int_s^t eps - hbar]
    descent_margin: float
    # F(0) - (inf nu estimate - hbar); filled once the family is aggregated
    infimum_margin: float = float("nan")


@dataclass(frozen=True)
class CertificateReport:
    rows: tuple
    background: dict
    grid: int
    t_max: float
    conv_tol: float
    h_mean: float
    min_F0: float
    inf_nu_est: float
    inf_F_est: float
    residual: float
    residual_tol: float
    tol: float
    diagnostics: tuple = ()

    @property
    def converged_rows(self):
        return [r for r in self.rows if r.converged]

    @property
    def rows_ok(self) -> bool:
        return all(
            r.valid
            and r.jensen_margin >= -self.tol
            and r.descent_margin >= -self.tol
            and not r.infimum_margin < -self.tol
            for r in self.rows
        )

    @property
    def passed(self) -> bool:
        return bool(self.converged_rows) and self.rows_ok and self.residual < self.residual_tol

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows"] = [asdict(r) for r in self.rows]
        d["diagnostics"] = list(self.diagnostics)
        d["passed"] = self.passed
        return d


def inequality_margins(trace: FlowTrace) -> tuple[float, float]:
    """Worst margins of the two per-trace inequalities.

    Returns ``(jensen, descent)``: the smallest ``nu - F - hbar`` over the trace
    and the smallest slack of ``F(0) >= -f(t) + nu(s) - int_s^t eps - hbar``
    over recorded pairs ``s < t``.
    """
    nu = trace.series("nu")
    F = trace.series("F")
    if nu.size == 0:
        return float("nan"), float("nan")
    hbar = trace.h_mean
    jensen = float(np.min(nu - F - hbar))
    if nu.size < 2:
        return jensen, float("inf")
    t = trace.series("t")
    fg = trace.series("f_gap")
    cum = cumulative_trapezoid(trace.series("eps"), t, initial=0.0)
    # sup over s < t of nu(s) + int_0^s eps
    best_s = np.maximum.accumulate(nu + cum)[:-1]
    rhs = -fg[1:] - cum[1:] + best_s - hbar
    return jensen, float(F[0] - rhs.max())


def _row(label: str, trace: FlowTrace) -> CertificateRow:
    if len(trace) == 0:
        nan = float("nan")
        return CertificateRow(label, False, False, trace.termination, 0.0,
                              nan, nan, nan, nan, nan, nan, nan)
    nu = trace.series("nu")
    F = trace.series("F")
    best = int(np.argmin(trace.series("sup_grad_u_sq")))
    jensen, descent = inequality_margins(trace)
    return CertificateRow(
        label=label,
        valid=True,
        converged=trace.converged,
        termination=trace.termination,
        t_end=trace.t_end,
        F0=float(F[0]),
        nu0=float(nu[0]),
        nu_end=float(nu[-1]),
        F_end=float(F[-1]),
        f_gap_best=float(trace.series("f_gap")[best]),
        jensen_margin=jensen,
        descent_margin=descent,
    )


def certify_theorem(
    bg: BackgroundGeometry,
    initial_family: Optional[Sequence] = None,
    cfg: Optional[FlowConfig] = None,
    tol: float = 1e-8,
    residual_tol: Optional[float] = None,
    workers: int = 1,
    return_traces: bool = False,
):
    """Flow every member of ``initial_family`` and compare both infima.

    ``initial_family`` is a sequence of ``(label, phi)`` pairs (default: the
    amplitude sweep of :func:`bump`).  The infima are estimated by the
    horizon values of the converged runs; a row whose initial potential is
    not a metric is kept but marked invalid.
    """
    cfg = cfg or FlowConfig()
    family = list(initial_family) if initial_family is not None else default_family(bg)
    if residual_tol is None:
        residual_tol = 1e-4 if bg.profile.name == "round" else 1e-3

    def flow_one(member):
        return run(bg, member[1], cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(flow_one, family))
    else:
        traces = [flow_one(m) for m in family]

    rows = [_row(label, tr) for (label, _), tr in zip(family, traces)]
    done = [r for r in rows if r.converged]
    hbar = bg.h_mean
    diagnostics = []
    if done:
        inf_nu = min(r.nu_end for r in done)
        inf_F = min(r.F_end for r in done)
        residual = abs(inf_F - (inf_nu - hbar))
        rows = [
            replace(r, infimum_margin=float(r.F0 - (inf_nu - hbar))) if r.valid else r
            for r in rows
        ]
    else:
        inf_nu = inf_F = residual = float("nan")
        diagnostics.append("no converged rows")
    for r in rows:
        if not r.valid:
            diagnostics.append(f"{r.label}: initial potential is not a metric")
        elif not r.converged:
            diagnostics.append(f"{r.label}: {r.termination} at t={r.t_end:g}, excluded")
    valid_F0 = [r.F0 for r in rows if r.valid]
    report = CertificateReport(
        rows=tuple(rows),
        background=bg.profile.describe(),
        grid=bg.grid.n,
        t_max=cfg.t_max,
        conv_tol=cfg.conv_tol,
        h_mean=hbar,
        min_F0=min(valid_F0) if valid_F0 else float("nan"),
        inf_nu_est=inf_nu,
        inf_F_est=inf_F,
        residual=residual,
        residual_tol=residual_tol,
        tol=tol,
        diagnostics=tuple(diagnostics),
    )
    if return_traces:
        return report, traces
    return report


# --------------------------------------------------------------------------
# weighted Poincaré inequality


@dataclass(frozen=True)
class PoincareSummary:
    margins: np.ndarray  # lhs - rhs per trial
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def worst_margin(self) -> float:
        return float(self.margins.min())

    def passed(self, tol: float = 1e-10) -> bool:
        return self.worst_margin >= -tol


def random_test_functions(sigma, trials: int, seed: int = 0) -> np.ndarray:
    """Seeded superpositions of Gaussian bumps with width at least 0.15."""
    rng = np.random.default_rng(seed)
    sigma = np.asarray(sigma)
    out = np.empty((trials, sigma.size))
    for i in range(trials):
        k = rng.integers(1, 6)
        centers = rng.uniform(-1.2, 1.2, k)
        widths = rng.uniform(0.15, 0.8, k)
        amps = rng.normal(size=k)
        out[i] = (amps[:, None] * np.exp(
            -0.5 * ((sigma[None, :] - centers[:, None]) / widths[:, None]) ** 2
        )).sum(axis=0)
    return out


def poincare_pair(bg: BackgroundGeometry, state: PotentialState, f) -> tuple[float, float]:
    """Both sides of ``int |grad f|^2 e^h >= int |f - f_h|^2 e^h`` on ``omega_phi``."""
    require_valid(state)
    grid = bg.grid
    h = ricci_potential(grid, bg.phi0 + state.phi, state.rho)
    w = np.exp(h)
    f = np.asarray(f, dtype=float)
    df = grid.d_sigma @ (f - f.mean())
    lhs = grid.integrate(grid.q * df**2 * w)
    fbar = grid.integrate(f * w * state.mass) / state.volume
    rhs = grid.integrate((f - fbar) ** 2 * w * state.mass)
    return lhs, rhs


def poincare_suite(
    bg: BackgroundGeometry, state: PotentialState, trials: int = 100, seed: int = 0, functions=None
) -> PoincareSummary:
    """Check the weighted Poincaré inequality on randomized smooth functions."""
    if functions is None:
        if trials < 1:
            raise ValueError("trials must be >= 1")
        functions = random_test_functions(bg.grid.sigma, trials, seed)
    pairs = np.array([poincare_pair(bg, state, f) for f in functions])
    return PoincareSummary(pairs[:, 0] - pairs[:, 1], pairs[:, 0], pairs[:, 1])


# --------------------------------------------------------------------------
# bound ledger


@dataclass(frozen=True)
class BoundRow:
    label: str
    B: float
    t_B: float
    t_end: float
    # start of the final stretch on which sup|u| never increases
    t_monotone: float
    sup_h: float
    sup_grad_h_sq: float
    sup_lap_h: float
    shift_identity_ok: bool
    plateau: bool

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite([self.B, self.sup_h, self.sup_grad_h_sq, self.sup_lap_h])))

    @property
    def attained_first_half(self) -> bool:
        return self.t_B <= 0.5 * self.t_end

    @property
    def nonincreasing_second_half(self) -> bool:
        return self.t_monotone <= 0.5 * self.t_end


@dataclass(frozen=True)
class BoundLedger:
    rows: tuple
    spread: dict = field(default_factory=dict)

    @property
    def all_finite(self) -> bool:
        return all(r.finite for r in self.rows)


def bound_ledger(traces: Sequence[FlowTrace], labels=None) -> BoundLedger:
    """Empirical ``B = sup_t sup|u|`` and the three ceilings for each run."""
    if not traces:
        raise ValueError("need at least one trace")
    labels = labels or [f"run{i}" for i in range(len(traces))]
    rows = []
    for label, tr in zip(labels, traces):
        sup_u = tr.series("sup_u")
        t = tr.series("t")
        if sup_u.size == 0:
            continue
        k = int(np.argmax(sup_u))
        B = float(sup_u[k])
        rises = np.nonzero(np.diff(sup_u) > 1e-9 * max(B, 1e-300) + 1e-14)[0]
        t_mono = float(t[rises[-1] + 1]) if rises.size else float(t[0])
        ceil = perelman_diagnostics(tr)
        shift_ok = bool(np.all(
            tr.series("sup_h") <= tr.series("sup_u") + np.abs(tr.series("a_t")) + 1e-12
        ))
        rows.append(BoundRow(
            label=label,
            B=B,
            t_B=float(t[k]),
            t_end=float(t[-1]),
            t_monotone=t_mono,
            sup_h=ceil.sup_h,
            sup_grad_h_sq=ceil.sup_grad_h_sq,
            sup_lap_h=ceil.sup_lap_h,
            shift_identity_ok=shift_ok,
            plateau=ceil.plateau,
        ))
    spread = {}
    for name in ("B", "sup_h", "sup_grad_h_sq", "sup_lap_h"):
        vals = np.array([getattr(r, name) for r in rows])
        pos = vals[vals > 0]
        spread[name] = float(pos.max() / pos.min()) if pos.size else 1.0
    return BoundLedger(tuple(rows), spread)
