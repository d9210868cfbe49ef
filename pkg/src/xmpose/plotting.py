"""SVG figures from result CSVs: PCK curves and training-loss curves."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ContractError, DatasetError  # noqa: E402
from .metrics import read_metrics_csv  # noqa: E402

LOSS_COLUMNS = ("L_P", "L_FM", "L_MMD", "L_DEPTH", "total")


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc


def _header(text: str) -> list:
    for line in text.splitlines():
        if line and not line.startswith("#"):
            return line.split(",")
    return []


def plot_pck(rows, out, title: str):
    curves = defaultdict(list)
    for r in rows:
        if r["metric"] == "pck":
            curves[(r["ablation"], r["split"])].append((r["threshold"], r["value"]))
    if not curves:
        raise ContractError("no PCK rows in the metrics file")
    fig, ax = plt.subplots(figsize=(5, 4))
    for (ablation, split), pts in sorted(curves.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{ablation} / {split}")
    ax.set_xlabel("error threshold (mm)")
    ax.set_ylabel("fraction of joints")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)


def plot_losses(text: str, out, title: str):
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    series = defaultdict(lambda: ([], []))
    for i, row in enumerate(csv.DictReader(lines)):
        for col in LOSS_COLUMNS:
            if row.get(col):
                xs, ys = series[(row["stage"], col)]
                xs.append(i)
                ys.append(float(row[col]))
    if not series:
        raise ContractError("no loss values in the training log")
    fig, ax = plt.subplots(figsize=(6, 4))
    for (stage, col), (xs, ys) in series.items():
        ax.plot(xs, ys, linewidth=0.8, label=f"{stage}: {col}")
    ax.set_yscale("log")
    ax.set_xlabel("step (all stages)")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)


def plot_csv(path, out=None) -> Path:
    """Render a metrics CSV (PCK rows) or a training log CSV to SVG; returns the figure path."""
    path = Path(path)
    out = Path(out) if out else path.with_suffix(".svg")
    text = _read(path)
    cols = _header(text)
    if "metric" in cols:
        plot_pck(read_metrics_csv(text), out, str(path))
    elif "stage" in cols:
        plot_losses(text, out, str(path))
    else:
        raise ContractError(f"{path} is neither a metrics CSV nor a training log")
    return out
