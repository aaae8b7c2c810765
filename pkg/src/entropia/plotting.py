"""Figures from metrics and sweep CSV files (matplotlib, file output only)."""
from __future__ import annotations

import csv
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ERROR_SERIES = (
    ("train_err_mean", "train (mean)", "C0", "-"),
    ("test_err_mean", "test (mean)", "C1", "-"),
    ("train_err_gibbs", "train (Gibbs)", "C0", "--"),
    ("test_err_gibbs", "test (Gibbs)", "C1", "--"),
)
BOUND_SERIES = (
    ("pac_bound", "PAC-Bayes bound", "C3", "-"),
    ("h_bound", "H-bound", "C2", ":"),
    ("c_bound", "C-bound", "C4", ":"),
)


def _read(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) if r[k] not in ("", "None") else math.nan for r in rows] for k in (rows[0] if rows else {})}


def plot_metrics(csv_path, out_path, title: str | None = None):
    """Errors and bounds (percent) against training ticks."""
    cols = _read(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    if cols:
        x = cols["tick"]
        for key, label, color, style in ERROR_SERIES + BOUND_SERIES:
            ax.plot(x, [100 * v for v in cols[key]], color=color, ls=style, marker=".", label=label)
    ax.set_xlabel("epoch / L")
    ax.set_ylabel("error (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_sweep(csv_path, out_path, x: str = "tau"):
    """Final train/test Gibbs error and bound against one swept parameter (log axis)."""
    with open(csv_path, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.DictReader(f) if r["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for labels, marker in (("true", "o"), ("random", "s")):
        sel = sorted((r for r in rows if r["labels"] == labels), key=lambda r: float(r[x]))
        if not sel:
            continue
        xs = [float(r[x]) for r in sel]
        for key, color in (("train_err_gibbs", "C0"), ("test_err_gibbs", "C1"), ("pac_bound", "C3")):
            ax.plot(xs, [100 * float(r[key]) for r in sel], color=color, marker=marker,
                    label=f"{key} ({labels})")
    ax.set_xscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel("error (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
