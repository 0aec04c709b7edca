"""Vector-graphics charts from metrics CSVs."""

from __future__ import annotations

import csv
import os
import warnings

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _read_csv(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return rows


def _series(rows, xcol, ycol):
    xs, ys = [], []
    for r in rows:
        if r.get(ycol) in (None, "") or r.get(xcol) in (None, ""):
            continue
        xs.append(float(r[xcol]))
        ys.append(float(r[ycol]))
    return xs, ys


def emit_plot(csv_paths, metrics, out_dir, log_time=False):
    """One chart per (metric, x-axis in {samples, wall time}), one series
    per CSV.  Returns the list of files written; metrics missing from
    every CSV are skipped with a warning."""
    if not csv_paths:
        raise ValueError("no input CSVs")
    os.makedirs(out_dir, exist_ok=True)
    data = {p: _read_csv(p) for p in csv_paths}
    written = []
    for metric in metrics:
        for xcol, xlabel in (("samples_seen", "training samples"),
                             ("wall_ms", "wall time (ms)")):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            plotted = False
            for path, rows in data.items():
                if rows and metric not in rows[0]:
                    continue
                xs, ys = _series(rows, xcol, metric)
                if not xs:
                    continue
                label = os.path.splitext(os.path.basename(path))[0]
                ax.plot(xs, ys, label=label, linewidth=1.0)
                plotted = True
            if not plotted:
                plt.close(fig)
                warnings.warn(f"metric {metric!r} missing from all inputs; chart skipped")
                continue
            if log_time and xcol == "wall_ms":
                ax.set_xscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel(metric)
            ax.legend(fontsize=7)
            fig.tight_layout()
            out = os.path.join(out_dir, f"{metric}_vs_{xcol}.svg")
            fig.savefig(out)
            plt.close(fig)
            written.append(out)
    return written
