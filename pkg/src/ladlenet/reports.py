"""Comparison tables and figures written next to the CSV/JSON outputs.

Figures use the non-interactive Agg backend and a fixed style so repeated
runs render identically.
"""
import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import HIGHER_IS_BETTER, METRIC_NAMES  # noqa: E402

TABLE_COLUMNS = ("SSIM", "MS-SSIM", "L1", "PSNR")
QUALITY_COLUMNS = ("AG", "MSE", "VIF", "CC")

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
    "svg.hashsalt": "ladlenet",
}


def _fmt(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.4f}"


def _ranking(rows, col):
    vals = [(name, r[col]) for name, r in rows.items() if col in r and not math.isnan(r[col])]
    return [n for n, _ in sorted(vals, key=lambda t: t[1], reverse=HIGHER_IS_BETTER.get(col, True))]


def format_table(rows, columns=TABLE_COLUMNS):
    """Aligned plain-text table; ``*`` marks the best and ``+`` the runner-up per column."""
    marks = {}
    for col in columns:
        order = _ranking(rows, col) if len(rows) > 1 else []
        for rank, name in enumerate(order[:2]):
            marks[(name, col)] = "*" if rank == 0 else "+"
    name_w = max([len(n) for n in rows] + [5])
    cells = {(n, c): _fmt(r[c]) + marks.get((n, c), " ") for n, r in rows.items() for c in columns}
    col_w = {c: max([len(c)] + [len(cells[(n, c)]) for n in rows]) for c in columns}
    lines = ["  ".join([" " * name_w] + [c.rjust(col_w[c]) for c in columns])]
    lines.append("  ".join(["-" * name_w] + ["-" * col_w[c] for c in columns]))
    for n in rows:
        lines.append("  ".join([n.ljust(name_w)] + [cells[(n, c)].rjust(col_w[c]) for c in columns]))
    lines.append("(* best, + second best)")
    return "\n".join(lines) + "\n"


def write_table_csv(rows, path, columns=METRIC_NAMES):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", *columns])
        for name, r in rows.items():
            w.writerow([name, *(repr(r[c]) for c in columns)])
    return path


def write_curves_csv(curves, path):
    """Loss curves of several runs side by side, one row per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(curves)
    longest = max((len(v) for v in curves.values()), default=0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", *names])
        for i in range(longest):
            w.writerow([i + 1, *(repr(curves[n][i]) if i < len(curves[n]) else "" for n in names)])
    return path


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_curves(curves, path, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for name, values in curves.items():
            ax.plot(range(1, len(values) + 1), values, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss")
        if title:
            ax.set_title(title)
        if curves:
            ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_training(losses, lrs, path):
    """Per-epoch loss with the learning rate on a log-scaled twin axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        epochs = range(1, len(losses) + 1)
        ax.plot(epochs, losses, color="C0")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss", color="C0")
        if lrs:
            ax2 = ax.twinx()
            ax2.step(epochs, lrs, where="post", color="C1", linewidth=0.9)
            ax2.set_yscale("log")
            ax2.set_ylabel("learning rate", color="C1")
            ax2.grid(False)
        fig.tight_layout()
        return _save(fig, path)


def plot_pair_metrics(reports, path, metrics=QUALITY_COLUMNS):
    """One panel per metric with a line per model over the evaluated pairs.

    Legend entries carry each model's mean; the best two are tagged I and II.
    """
    means = {name: rep.means for name, rep in reports.items()}
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(8.0, 5.5))
        for ax, metric in zip(axes.ravel(), metrics):
            order = _ranking(means, metric)
            tags = {n: t for n, t in zip(order, (" (I)", " (II)"))} if len(reports) > 1 else {}
            for name, rep in reports.items():
                ax.plot([r[metric] for r in rep.rows], marker=".", markersize=3,
                        label=f"{name}: {_fmt(means[name][metric])}{tags.get(name, '')}")
            ax.set_title(metric)
            ax.set_xlabel("pair")
            ax.legend()
        fig.tight_layout()
        return _save(fig, path)
