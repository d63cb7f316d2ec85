"""Render convergence curves from one or more metrics CSV files.

The input schema is the harness contract:
``algo,threads,seed,eta,row,elapsed_units,wall_seconds,grad_evals,train_loss,grad_norm_sq``
with ``#`` comment lines.  One line series is drawn per distinct
(algo, threads, eta) triple, labelled ``algo-threads``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

REQUIRED_COLUMNS = (
    "algo",
    "threads",
    "seed",
    "eta",
    "row",
    "elapsed_units",
    "wall_seconds",
    "grad_evals",
    "train_loss",
    "grad_norm_sq",
)

Y_COLUMNS = ("train_loss", "grad_norm_sq")


class SchemaError(ValueError):
    """Input CSV does not match the metrics schema."""


@dataclass
class PlotSpec:
    inputs: list[str]
    y_column: str = "train_loss"
    logy: bool = False
    output: str = "figure.png"

    def __post_init__(self) -> None:
        if not self.inputs:
            raise ValueError("at least one input CSV is required")
        if self.y_column not in Y_COLUMNS:
            raise ValueError(f"y_column must be one of {Y_COLUMNS}")


def load_metrics(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path, comment="#")
    missing = [col for col in REQUIRED_COLUMNS if col not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    if frame.empty:
        raise SchemaError(f"{path}: no data rows")
    return frame


def render(spec: PlotSpec) -> list[str]:
    """Write the figure and return the legend labels in plotted order."""
    frames = [load_metrics(path) for path in spec.inputs]
    table = pd.concat(frames, ignore_index=True)

    fig, ax = plt.subplots(figsize=(7, 5))
    labels: list[str] = []
    groups = sorted(
        table.groupby(["algo", "threads", "eta"]).groups.keys(),
        key=lambda key: (key[0], int(key[1]), float(key[2])),
    )
    for algo, threads, eta in groups:
        series = table[
            (table["algo"] == algo) & (table["threads"] == threads) & (table["eta"] == eta)
        ].sort_values("row")
        label = f"{algo}-{threads}"
        show = label not in labels
        if show:
            labels.append(label)
        ax.plot(
            series["elapsed_units"],
            series[spec.y_column],
            marker="o",
            markersize=3,
            label=label if show else None,
        )
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel("elapsed units (single-thread full-pass time = 1)")
    ax.set_ylabel(spec.y_column.replace("_", " "))
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(spec.output)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return labels
