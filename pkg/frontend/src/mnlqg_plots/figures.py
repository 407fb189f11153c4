"""Render figures from the analysis toolkit's documented file formats.

Reads only the CSV/JSON files the main CLI writes; no statistic is ever
recomputed here, so the numbers on a figure always come from one source.
Figures are pure functions of their input files: fixed style, fixed dpi, no
timestamps embedded, byte-stable across repeated runs on identical inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "render_histogram", "render_sweep"]

# Bulk of the distribution, not the extreme tail: bins cover up to the 99.5th
# percentile and one overflow bin absorbs everything above, so counts still
# sum to the trace length while heavy tails cannot flatten the plot.
DEFAULT_BINS = 200
TAIL_PERCENTILE = 99.5

MIN_TRACE_ROWS = 1000

_PNG_METADATA = {"Software": "mnlqg-plots"}
_FIGSIZE = (8.0, 4.5)
_DPI = 150


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: input files, optional threshold files, output image."""

    inputs: tuple[Path, ...]
    output: Path
    kind: str
    thresholds: tuple[Path, ...] = ()
    bins: int = DEFAULT_BINS
    column: str = "rho_H"

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "thresholds", tuple(Path(p) for p in self.thresholds))
        object.__setattr__(self, "output", Path(self.output))
        if self.kind not in ("histogram", "sweep"):
            raise ValueError(f"kind must be 'histogram' or 'sweep', got {self.kind!r}")
        if self.bins < 1:
            raise ValueError("bins must be positive")


def _read_q_column(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
    if "q" not in header:
        raise ValueError(f"{path}: no 'q' column in header {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=header.index("q"), ndmin=1)
    if data.size == 0:
        raise ValueError(f"{path}: empty input")
    if data.size < MIN_TRACE_ROWS:
        raise ValueError(f"{path}: need at least {MIN_TRACE_ROWS} rows, got {data.size}")
    return data


def _read_alpha(path: Path) -> float:
    doc = json.loads(Path(path).read_text())
    return float(doc["alpha_star"])


def render_histogram(spec: FigureSpec) -> dict:
    """Overlaid normalized histograms of q with optional threshold lines.

    Threshold files pair with traces by position. Legend entries carry the
    empirical exceedance rate of each trace against its own threshold.
    Returns the plotted data (bin edges, raw counts, thresholds) so callers
    can check figures without parsing the image back.
    """
    if not spec.inputs:
        raise ValueError("histogram needs at least one trace CSV")
    if spec.thresholds and len(spec.thresholds) != len(spec.inputs):
        raise ValueError("need one threshold file per trace (or none)")
    series = [(path.stem, _read_q_column(path)) for path in spec.inputs]
    alphas = [_read_alpha(p) for p in spec.thresholds] if spec.thresholds else None

    hi = max(float(np.percentile(q, TAIL_PERCENTILE)) for _, q in series)
    top = max(float(q.max()) for _, q in series)
    if hi <= 0.0:
        hi = max(top, 1.0)
    edges = np.linspace(0.0, hi, spec.bins + 1)
    if top > hi:
        edges = np.append(edges, np.nextafter(top, np.inf))

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    out_series = []
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (label, q) in enumerate(series):
        counts, _ = np.histogram(q, bins=edges)
        color = colors[i % len(colors)]
        alpha_val = alphas[i] if alphas else None
        text = label
        if alpha_val is not None:
            rate = float(np.mean(q > alpha_val))
            text = f"{label} (rate {100 * rate:.2f}% at {alpha_val:.3f})"
        else:
            rate = None
        ax.hist(q, bins=edges, density=True, histtype="stepfilled",
                alpha=0.45, color=color, label=text)
        if alpha_val is not None:
            ax.axvline(alpha_val, color=color, linestyle="--", linewidth=1.2)
        out_series.append(
            {"label": label, "counts": counts, "edges": edges,
             "alpha": alpha_val, "rate": rate}
        )
    ax.set_xlim(0.0, hi)
    ax.set_xlabel("detection statistic q")
    ax.set_ylabel("density")
    ax.legend(loc="upper right")
    fig.tight_layout()
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)
    return {"series": out_series, "output": spec.output}


def _read_sweep(path: Path, column: str):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty input")
    for needed in ("sigma2", "compensator", column):
        if needed not in rows[0]:
            raise ValueError(f"{path}: no '{needed}' column in {sorted(rows[0])}")
    series: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        value = row[column]
        y = float("nan") if value == "N/A" else float(value)
        series.setdefault(row["compensator"], []).append((float(row["sigma2"]), y))
    return series


def render_sweep(spec: FigureSpec) -> dict:
    """Line plot of one sweep column vs sigma2, one series per compensator.

    "N/A" cells become gaps in the corresponding line.
    """
    if len(spec.inputs) != 1:
        raise ValueError("sweep takes exactly one sweep CSV")
    series = _read_sweep(spec.inputs[0], spec.column)

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    out = {}
    for name in sorted(series):
        points = sorted(series[name])
        x = np.array([p[0] for p in points])
        y = np.array([p[1] for p in points])
        ax.plot(x, y, marker="o", label=name)
        out[name] = {"sigma2": x, "values": y}
    ax.set_xlabel("multiplicative noise variance")
    ax.set_ylabel(spec.column)
    ax.legend()
    fig.tight_layout()
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)
    return {"series": out, "output": spec.output}
