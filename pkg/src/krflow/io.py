"""Serialization of traces, snapshots, manifests and certificates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .flow import CSV_COLUMNS, FlowTrace

__all__ = [
    "InputFileError",
    "RunManifest",
    "fmt",
    "write_trace_csv",
    "read_trace_csv",
    "write_snapshots",
    "load_samples_json",
    "load_family_json",
    "write_certificate",
    "CERTIFICATE_COLUMNS",
]


class InputFileError(OSError):
    """An input file is missing, unreadable or malformed."""


def fmt(x: float) -> str:
    # 17 significant digits round-trips every double
    return format(float(x), ".17g")


def write_trace_csv(trace: FlowTrace, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in trace.records:
            w.writerow([fmt(getattr(rec, c)) for c in CSV_COLUMNS])
    return path


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as float arrays keyed by header name."""
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputFileError(f"cannot read {path}: {exc}") from exc
    if not rows:
        return {}
    header, body = rows[0], rows[1:]
    cols = {name: [] for name in header}
    for row in body:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        for name, val in zip(header, row):
            cols[name].append(float(val))
    return {k: np.array(v) for k, v in cols.items()}


def write_snapshots(trace: FlowTrace, sigma, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sigma = [float(x) for x in sigma]
    paths = []
    for i, (t, phi) in enumerate(trace.snapshots):
        p = directory / f"{i:04d}.json"
        payload = {"t": float(t), "sigma": sigma, "phi": [float(x) for x in phi]}
        p.write_text(json.dumps(payload) + "\n", encoding="utf-8")
        paths.append(p)
    return paths


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputFileError(f"cannot read {path}: {exc}") from exc


def _samples(obj, where) -> tuple[np.ndarray, np.ndarray]:
    try:
        sigma = np.asarray(obj["sigma"], dtype=float)
        values = np.asarray(obj["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFileError(f"{where}: expected {{sigma[], values[]}}") from exc
    if sigma.ndim != 1 or sigma.shape != values.shape or sigma.size < 2:
        raise InputFileError(f"{where}: sigma and values must be equal-length lists")
    return sigma, values


def load_samples_json(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``{"sigma": [...], "values": [...]}``."""
    return _samples(_read_json(path), str(path))


def load_family_json(path) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Read a family file: a list (or ``{"members": [...]}``) of sample objects.

    Each member may carry a ``label``; the default is its position.
    """
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get("members")
    if not isinstance(data, list) or not data:
        raise InputFileError(f"{path}: expected a non-empty list of members")
    out = []
    for i, member in enumerate(data):
        sigma, values = _samples(member, f"{path}[{i}]")
        label = str(member.get("label", f"member{i}")) if isinstance(member, dict) else f"member{i}"
        out.append((label, sigma, values))
    return out


@dataclass
class RunManifest:
    """Everything needed to reproduce a run's CSV output."""

    config: dict
    grid: int
    background: str
    phi0: str
    seed: int = 0
    version: str = __version__
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        return cls(**data)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        data = _read_json(path)
        try:
            return cls(**data)
        except TypeError as exc:
            raise InputFileError(f"{path}: not a run manifest ({exc})") from exc


CERTIFICATE_COLUMNS = (
    "label", "valid", "converged", "termination", "t_end", "F0", "nu0",
    "nu_end", "F_end", "f_gap_best", "jensen_margin", "descent_margin", "infimum_margin",
)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_certificate(report, directory, extra: Optional[dict] = None) -> tuple[Path, Path]:
    """Write ``certificate.json`` and ``certificate.csv``; non-finite numbers become null/empty."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    jpath = directory / "certificate.json"
    jpath.write_text(json.dumps(_json_safe(payload), indent=2) + "\n", encoding="utf-8")
    cpath = directory / "certificate.csv"
    with cpath.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CERTIFICATE_COLUMNS)
        for row in report.rows:
            vals = []
            for c in CERTIFICATE_COLUMNS:
                v = getattr(row, c)
                if isinstance(v, bool) or isinstance(v, str):
                    vals.append(str(v).lower() if isinstance(v, bool) else v)
                else:
                    vals.append(fmt(v) if math.isfinite(v) else "")
            w.writerow(vals)
    return jpath, cpath
