"""Writers and readers for run outputs.

Nothing written here carries a timestamp or wall-clock figure, so a rerun
with the same manifest and inputs reproduces every file byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import math
from pathlib import Path

import numpy as np

from .diagnostics import QUANTILES, Summary
from .joint import PosteriorSample


def fmt_float(x) -> str:
    """Shortest round-tripping decimal form."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def tau_label(tau) -> str:
    return "mean" if tau is None else f"tau-{float(tau):g}"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_samples_csv(path, sample: PosteriorSample) -> None:
    """One column per parameter, one row per stored draw."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sample.names)
        for row in sample.draws:
            w.writerow([fmt_float(v) for v in row])


def read_samples_csv(path, metadata=None) -> PosteriorSample:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            names = tuple(next(reader))
        except StopIteration:
            raise ValueError(f"{path}: empty samples file") from None
        rows = [[float(v) for v in row] for row in reader if row]
    draws = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return PosteriorSample(names=names, draws=draws, metadata=dict(metadata or {}),
                           subject_ids=(), random_effects_mean=np.zeros((0, 2)))


def summary_text(summary: Summary) -> str:
    """INI text: one section per parameter."""
    cp = configparser.ConfigParser(interpolation=None)
    for name, ps in summary.parameters.items():
        sec = {"mean": fmt_float(ps.mean), "sd": fmt_float(ps.sd)}
        for p, q in zip(QUANTILES, ps.quantiles):
            sec[f"q{100 * p:g}"] = fmt_float(q)
        sec["sign_fraction"] = fmt_float(ps.sign_fraction)
        sec["significant"] = "true" if ps.significant else "false"
        sec["ess"] = fmt_float(ps.ess)
        sec["geweke_z"] = fmt_float(ps.geweke_z)
        cp[name] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def write_summary(path, summary: Summary) -> None:
    Path(path).write_text(summary_text(summary), encoding="utf-8")


def read_summary(path) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path, encoding="utf-8")
    out = {}
    for sec in cp.sections():
        out[sec] = {k: (v == "true" if k == "significant" else float(v)) for k, v in cp[sec].items()}
    return out


def write_manifest(path, entries: dict) -> None:
    """``key = value`` lines in insertion order."""
    lines = [f"{k} = {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


def write_figure_csv(path, rows, parameter="alpha") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "draw", parameter, "significant"])
        for tau, i, v, sig in rows:
            w.writerow(["" if tau is None else fmt_float(tau), i, fmt_float(v), int(sig)])
