"""Delimited tables plus rendered figures for the reporting paths."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def format_value(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.6g}"
    return str(v)


def write_table(path, rows, columns=None):
    """Tab-separated table with a header row; rows are dicts."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(format_value(row.get(c, "")) for c in columns))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def append_row(path, row, columns):
    """Append-only log: header written once, one line per call."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a") as fh:
        if new:
            fh.write("\t".join(columns) + "\n")
        fh.write("\t".join(format_value(row.get(c, "")) for c in columns) + "\n")


def plot_loss_curve(log_path, out_path):
    """Render the training loss log; skips silently on an empty log."""
    with open(log_path) as fh:
        lines = [l.rstrip("\n") for l in fh if l.strip()]
    if len(lines) < 2:
        return False
    columns = lines[0].split("\t")
    data = {c: [] for c in columns}
    for line in lines[1:]:
        for c, v in zip(columns, line.split("\t")):
            try:
                data[c].append(float(v))
            except ValueError:
                data[c].append(np.nan)
    fig, ax = plt.subplots(figsize=(7, 4))
    x = data.get("epoch", list(range(len(lines) - 1)))
    for c in columns:
        if c in ("epoch", "step"):
            continue
        if np.isfinite(data[c]).any():
            ax.plot(x, data[c], label=c)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return True


def plot_trace(rows, out_path):
    """rows: (t, rmsd_to_final, mean_entropy) per integration step."""
    t = [r[0] for r in rows]
    rmsd = [r[1] for r in rows]
    ent = [r[2] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(t, rmsd, color="tab:blue", label="RMSD to final")
    ax1.set_xlabel("t")
    ax1.set_ylabel("RMSD to final estimate (A)", color="tab:blue")
    if np.isfinite(ent).any():
        ax2 = ax1.twinx()
        ax2.plot(t, ent, color="tab:orange", label="mean entropy")
        ax2.set_ylabel("mean residue entropy (nats)", color="tab:orange")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_rmsd_histogram(values, out_path):
    values = np.asarray(values, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=min(30, max(5, len(values))), color="tab:blue")
    for cut, style in ((2.0, "--"), (5.0, ":")):
        ax.axvline(cut, color="tab:red", linestyle=style, label=f"{cut:g} A")
    ax.set_xlabel("RMSD (A)")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
