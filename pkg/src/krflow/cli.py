"""Command-line interface: ``krflow run | certify | plot``.

Exit codes follow sysexits: 64 bad usage, 65 bad data, 66 unreadable input.
``run`` returns 0/2/3 for converged/horizon/degenerate and ``certify``
returns 0 only when every row inequality and the residual check pass.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .analysis import bump, certify_theorem, default_family, poincare_suite
from .flow import FlowConfig, run
from .geometry import (
    GridError,
    ProfileError,
    make_background,
    make_state,
    sampled_profile,
)
from .io import (
    InputFileError,
    RunManifest,
    load_family_json,
    load_samples_json,
    read_trace_csv,
    write_certificate,
    write_snapshots,
    write_trace_csv,
)

log = logging.getLogger("krflow")

EX_USAGE = 64
EX_DATAERR = 65
EX_NOINPUT = 66
RUN_EXIT = {"converged": 0, "horizon": 2, "degenerate": 3}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EX_USAGE)


def _default_out() -> str:
    return os.environ.get("KRFLOW_OUT", "krflow-out")


def build_background(spec: str, n: int):
    name = spec.split(":", 1)[0]
    if name in ("round", "perturbed"):
        try:
            return make_background(n, spec)
        except ValueError as exc:
            if isinstance(exc, (ProfileError, GridError)) and ":" in spec:
                raise
            raise UsageError(f"bad --background {spec!r}: {exc}") from exc
    path = spec[5:] if spec.startswith("file:") else spec
    sigma, values = load_samples_json(path)
    return make_background(n, sampled_profile(sigma, values, name=f"file:{path}"))


def resample(bg, sigma, values) -> np.ndarray:
    return sampled_profile(sigma, values).psi(bg.grid.sigma)


def build_phi0(spec: str, bg) -> np.ndarray:
    if spec == "zero":
        return np.zeros(bg.grid.n)
    if spec.startswith("bump:"):
        try:
            amp = float(spec[5:])
        except ValueError as exc:
            raise UsageError(f"bad --phi0 {spec!r}") from exc
        return amp * bump(bg.grid.sigma)
    path = spec[5:] if spec.startswith("file:") else spec
    return resample(bg, *load_samples_json(path))


def _config(args) -> FlowConfig:
    kw = {"t_max": args.t_max, "conv_tol": args.conv_tol, "stepper": args.stepper}
    if args.dt is not None:
        kw.update(dt_init=args.dt, dt_max=args.dt, dt_min=min(FlowConfig.dt_min, args.dt))
    if getattr(args, "snapshot_every", None):
        kw["snapshot_every"] = args.snapshot_every
    try:
        return FlowConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    if args.manifest:
        manifest = RunManifest.read(args.manifest)
        try:
            cfg = FlowConfig(**manifest.config)
        except (TypeError, ValueError) as exc:
            raise InputFileError(f"{args.manifest}: bad config ({exc})") from exc
        n, bg_spec, phi_spec, seed = manifest.grid, manifest.background, manifest.phi0, manifest.seed
    else:
        cfg = _config(args)
        n, bg_spec, phi_spec, seed = args.grid, args.background, args.phi0, args.seed
    out = Path(args.out or _default_out())
    bg = build_background(bg_spec, n)
    phi0 = build_phi0(phi_spec, bg)

    trace = run(bg, phi0, cfg)

    out.mkdir(parents=True, exist_ok=True)
    outputs = {
        "trace": "trace.csv",
        "snapshots": "snapshots",
        "manifest": "manifest.json",
    }
    write_trace_csv(trace, out / outputs["trace"])
    write_snapshots(trace, bg.grid.sigma, out / outputs["snapshots"])
    if args.figures and len(trace) > 1:
        from .plotting import render_trace

        cols = {c: trace.series(c) for c in ("t", "nu", "F", "f_gap", "b", "ubar")}
        render_trace(cols, out / "trace.png")
        outputs["figure"] = "trace.png"
    RunManifest(
        config=asdict(cfg),
        grid=n,
        background=bg_spec,
        phi0=phi_spec,
        seed=seed,
        outputs=outputs,
    ).write(out / outputs["manifest"])

    last = trace.records[-1] if trace.records else None
    if last is None:
        print(f"{trace.termination}: initial potential is not a metric", file=sys.stderr)
    else:
        print(
            f"{trace.termination} t={last.t:.6g} steps={len(trace) - 1} "
            f"nu={last.nu:.12g} F={last.F:.12g} sup|grad u|^2={last.sup_grad_u_sq:.3g}"
        )
    return RUN_EXIT[trace.termination]


def cmd_certify(args) -> int:
    cfg = _config(args)
    bg = build_background(args.background, args.grid)
    if args.family == "default":
        family = default_family(bg)
    else:
        family = [(label, resample(bg, s, v)) for label, s, v in load_family_json(args.family)]
    report, traces = certify_theorem(bg, family, cfg, workers=args.workers, return_traces=True)
    poinc = poincare_suite(bg, make_state(bg, np.zeros(bg.grid.n)), trials=100, seed=args.seed)
    out = Path(args.out or _default_out())
    write_certificate(report, out, extra={
        "family": args.family,
        "seed": args.seed,
        "poincare_worst_margin": poinc.worst_margin,
    })
    if args.figures:
        from .plotting import render_certificate

        render_certificate(report, traces, out / "certificate.png")
    for d in report.diagnostics:
        print(d, file=sys.stderr)
    print(
        f"residual={report.residual:.3g} (tol {report.residual_tol:g}) "
        f"inf_nu={report.inf_nu_est:.12g} inf_F={report.inf_F_est:.12g} "
        f"passed={report.passed}"
    )
    return 0 if report.passed else 1


def cmd_plot(args) -> int:
    from .plotting import PLOT_SERIES, gnuplot_script

    cols = read_trace_csv(args.trace)
    missing = [c for c in ("t",) + PLOT_SERIES if c not in cols]
    if missing:
        print(f"trace lacks columns: {', '.join(missing)}", file=sys.stderr)
        return EX_DATAERR
    if cols["t"].size == 0:
        print("trace has no rows", file=sys.stderr)
        return EX_DATAERR
    if any(np.isnan(cols[c]).any() for c in ("t",) + PLOT_SERIES):
        print("trace contains NaN rows", file=sys.stderr)
        return EX_DATAERR
    script = gnuplot_script(Path(args.trace), list(cols))
    if args.output:
        Path(args.output).write_text(script, encoding="utf-8")
    else:
        sys.stdout.write(script)
    return 0


# --------------------------------------------------------------------------


def _add_flow_flags(p):
    p.add_argument("--grid", type=int, default=256, help="number of nodes")
    p.add_argument("--background", default="round",
                   help="round | perturbed[:EPS] | PATH to {sigma[], values[]} JSON")
    p.add_argument("--t-max", type=float, default=30.0)
    p.add_argument("--conv-tol", type=float, default=1e-8)
    p.add_argument("--dt", type=float, default=None, help="fixed maximal step")
    p.add_argument("--stepper", choices=("semi-implicit", "rk4"), default="semi-implicit")
    p.add_argument("--out", default=None, help="output directory (default $KRFLOW_OUT)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", dest="figures", action="store_false")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="krflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="integrate one flow and write trace.csv")
    _add_flow_flags(p)
    p.add_argument("--phi0", default="zero", help="zero | bump:AMP | PATH")
    p.add_argument("--snapshot-every", type=int, default=None)
    p.add_argument("--manifest", default=None, help="re-run from a manifest.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="flow a family and certify inf F = inf nu - hbar")
    _add_flow_flags(p)
    p.add_argument("--family", default="default", help="default | PATH")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("plot", help="emit a gnuplot script for a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"krflow: error: {exc}", file=sys.stderr)
        return EX_USAGE
    except InputFileError as exc:
        print(f"krflow: {exc}", file=sys.stderr)
        return EX_NOINPUT
    except (ProfileError, GridError, ValueError) as exc:
        print(f"krflow: {exc}", file=sys.stderr)
        return EX_DATAERR


if __name__ == "__main__":
    sys.exit(main())
