import json
import subprocess
import sys

import numpy as np
import pytest

from krflow.cli import main
from krflow.flow import CSV_COLUMNS, FlowConfig, run
from krflow.geometry import make_background
from krflow.io import (
    InputFileError,
    RunManifest,
    fmt,
    load_family_json,
    load_samples_json,
    read_trace_csv,
    write_trace_csv,
)
from krflow.plotting import PLOT_SERIES, gnuplot_script

FAST = ["--grid", "64", "--no-figures"]


def run_cli(*args):
    return main([str(a) for a in args])


def test_run_converged_writes_outputs(tmp_path):
    out = tmp_path / "o"
    assert run_cli("run", *FAST, "--phi0", "bump:0.3", "--out", out) == 0
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["grid"] == 64
    snaps = sorted((out / "snapshots").glob("*.json"))
    assert snaps[0].name == "0000.json"
    snap = json.loads(snaps[-1].read_text())
    assert set(snap) == {"t", "sigma", "phi"}
    assert len(snap["sigma"]) == len(snap["phi"]) == 64


def test_run_zero_potential_is_fixed(tmp_path):
    out = tmp_path / "z"
    assert run_cli("run", *FAST, "--out", out) == 0
    cols = read_trace_csv(out / "trace.csv")
    assert cols["t"].size == 1
    assert cols["sup_u"][0] == 0.0


def test_run_horizon_exit(tmp_path):
    assert run_cli("run", *FAST, "--phi0", "bump:0.3", "--t-max", "0.05", "--out", tmp_path) == 2


def test_run_degenerate_exit(tmp_path):
    assert run_cli("run", *FAST, "--phi0", "bump:50", "--out", tmp_path) == 3
    assert (tmp_path / "trace.csv").read_text().strip() == ",".join(CSV_COLUMNS)


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--grid", "4"],
        ["run", "--grid", "abc"],
        ["run", "--phi0", "bump:x"],
        ["run", "--dt", "-1"],
        ["run", "--background", "perturbed:abc"],
        ["frobnicate"],
    ],
)
def test_usage_errors(args, tmp_path, capsys):
    with_out = args + ["--out", str(tmp_path)] if args[0] == "run" else args
    try:
        code = main(with_out)
    except SystemExit as exc:
        code = exc.code
    assert code == 64


def test_missing_input_file(tmp_path):
    assert run_cli("run", *FAST, "--phi0", tmp_path / "nope.json", "--out", tmp_path) == 66
    assert run_cli("plot", "--trace", tmp_path / "nope.csv") == 66
    assert run_cli("run", "--manifest", tmp_path / "nope.json") == 66


def test_nonpositive_background_file(tmp_path):
    x = np.linspace(-1, 1, 40)
    f = tmp_path / "bg.json"
    f.write_text(json.dumps({"sigma": x.tolist(), "values": (5 * x**2).tolist()}))
    assert run_cli("run", *FAST, "--background", f, "--out", tmp_path) == 65


def test_background_file_domain_mismatch(tmp_path):
    x = np.linspace(-0.5, 0.5, 20)
    f = tmp_path / "bg.json"
    f.write_text(json.dumps({"sigma": x.tolist(), "values": (0.01 * x).tolist()}))
    assert run_cli("run", *FAST, "--background", f"file:{f}", "--out", tmp_path) == 65


def test_manifest_rerun_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_cli("run", *FAST, "--background", "perturbed", "--phi0", "bump:-0.3", "--out", a)
    run_cli("run", "--manifest", a / "manifest.json", "--out", b, "--no-figures")
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    for sa in (a / "snapshots").iterdir():
        assert sa.read_bytes() == (b / "snapshots" / sa.name).read_bytes()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("KRFLOW_OUT", str(tmp_path / "env"))
    assert run_cli("run", *FAST) == 0
    assert (tmp_path / "env" / "trace.csv").exists()


def test_run_renders_figure(tmp_path):
    assert run_cli("run", "--grid", "64", "--phi0", "bump:0.3", "--out", tmp_path) == 0
    assert (tmp_path / "trace.png").read_bytes()[:4] == b"\x89PNG"
    assert json.loads((tmp_path / "manifest.json").read_text())["outputs"]["figure"] == "trace.png"


def test_plot_script_has_five_series(tmp_path, capsys):
    run_cli("run", *FAST, "--phi0", "bump:0.3", "--out", tmp_path)
    capsys.readouterr()
    assert run_cli("plot", "--trace", tmp_path / "trace.csv") == 0
    script = capsys.readouterr().out
    titles = [line.split('title "')[1].split('"')[0] for line in script.splitlines() if 'title "' in line]
    assert titles == list(PLOT_SERIES)
    assert run_cli("plot", "--trace", tmp_path / "trace.csv", "--output", tmp_path / "p.gp") == 0
    assert (tmp_path / "p.gp").read_text() == script


def test_plot_rejects_bad_traces(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(CSV_COLUMNS) + "\n")
    assert run_cli("plot", "--trace", empty) == 65
    nan = tmp_path / "nan.csv"
    nan.write_text(",".join(CSV_COLUMNS) + "\n" + ",".join(["nan"] * len(CSV_COLUMNS)) + "\n")
    assert run_cli("plot", "--trace", nan) == 65
    partial = tmp_path / "partial.csv"
    partial.write_text("t,nu\n0,0\n")
    assert run_cli("plot", "--trace", partial) == 65


def test_gnuplot_script_requires_columns():
    with pytest.raises(KeyError):
        gnuplot_script("x.csv", ["t", "nu"])


def test_certify_family_file_with_invalid_member(tmp_path):
    x = np.linspace(-1, 1, 65)
    members = [
        {"label": "small", "sigma": x.tolist(), "values": (0.05 * np.cos(np.pi * x / 2)).tolist()},
        {"label": "huge", "sigma": x.tolist(), "values": (40 * np.cos(np.pi * x / 2)).tolist()},
    ]
    fam = tmp_path / "fam.json"
    fam.write_text(json.dumps({"members": members}))
    code = run_cli("certify", *FAST, "--family", fam, "--out", tmp_path)
    assert code == 1
    cert = json.loads((tmp_path / "certificate.json").read_text())
    rows = {r["label"]: r for r in cert["rows"]}
    assert rows["small"]["converged"] and not rows["huge"]["valid"]
    assert rows["huge"]["F0"] is None
    lines = (tmp_path / "certificate.csv").read_text().splitlines()
    assert len(lines) == 3


def test_certify_default_family(tmp_path):
    assert run_cli("certify", "--grid", "64", "--out", tmp_path) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["passed"] and cert["poincare_worst_margin"] >= -1e-10
    assert (tmp_path / "certificate.png").exists()


def test_trace_csv_round_trip(tmp_path):
    bg = make_background(32)
    tr = run(bg, 0.2 * np.cos(np.pi * bg.grid.sigma / 2), FlowConfig(t_max=0.1))
    path = write_trace_csv(tr, tmp_path / "t.csv")
    cols = read_trace_csv(path)
    for name in CSV_COLUMNS:
        assert np.array_equal(cols[name], tr.series(name))


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, -2.5e-300, 1e308):
        assert float(fmt(v)) == v


def test_manifest_json_round_trip(tmp_path):
    m = RunManifest(config={"t_max": 1.0}, grid=32, background="round", phi0="zero", seed=5)
    assert RunManifest.from_json(m.to_json()) == m
    assert RunManifest.read(m.write(tmp_path / "m.json")) == m


def test_loaders_reject_malformed(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InputFileError):
        load_samples_json(bad)
    bad.write_text(json.dumps({"sigma": [0, 1], "values": [1]}))
    with pytest.raises(InputFileError):
        load_samples_json(bad)
    bad.write_text(json.dumps([]))
    with pytest.raises(InputFileError):
        load_family_json(bad)


def test_console_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "krflow.cli", "run", *FAST, "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0
    assert res.stdout.startswith("converged")
