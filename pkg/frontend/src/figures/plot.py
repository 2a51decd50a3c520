"""Render experiment CSVs as figures: shaded lower/upper bound bands per
mixture weight, and normalized-functional decay curves per scaling function.

This layer never recomputes statistics: every plotted series is taken
verbatim from the CSV, so the numerical pipeline is testable without it.
Styling is deterministic (fixed color cycle, keys sorted) and saved images
carry no timestamps or tool versions, making repeated renders byte-identical
for the same input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG1_SCHEMA = "fig1.v1"
FIG2_SCHEMA = "fig2.v1"

FIG1_REQUIRED = ("n", "tau", "lambda", "gamma", "d", "ell", "u", "stderr_ell", "stderr_u")
FIG2_REQUIRED = ("psi", "T", "tau", "phi_normalized", "stderr")

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class SchemaError(ValueError):
    """CSV schema line or header does not match the expected figure kind."""


class EmptyDataError(ValueError):
    """CSV carries a valid header but no rows."""


@dataclass(frozen=True)
class PlotSpec:
    input_csv: str
    kind: str  # "fig1" | "fig2"
    output: str

    def __post_init__(self):
        if self.kind not in ("fig1", "fig2"):
            raise ValueError(f"kind must be 'fig1' or 'fig2', got {self.kind!r}")


def read_figure_csv(path: str, kind: str):
    """Parse a versioned experiment CSV into a list of typed row dicts.

    Validates the schema comment line and the header columns; raises
    ``EmptyDataError`` with the message "no rows" when only the header is
    present.
    """
    expected_schema = FIG1_SCHEMA if kind == "fig1" else FIG2_SCHEMA
    required = FIG1_REQUIRED if kind == "fig1" else FIG2_REQUIRED
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema={expected_schema}":
            raise SchemaError(
                f"schema mismatch: expected '# schema={expected_schema}', found {first!r}"
            )
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"missing columns {missing} in header {header}")
        rows = []
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if key == "psi":
                    row[key] = value
                else:
                    row[key] = float(value)
            rows.append(row)
    if not rows:
        raise EmptyDataError("no rows")
    return rows


def build_fig1(rows):
    """One panel per (n, tau); per mixture weight, a shaded band between the
    lower and upper bound curves over the aspect-ratio grid.

    Returns (figure, series) where ``series`` maps
    (n, tau, lambda) -> {"gamma": .., "ell": .., "u": ..} arrays exactly as
    plotted.
    """
    panels = sorted({(r["n"], r["tau"]) for r in rows})
    lambdas = sorted({r["lambda"] for r in rows})
    fig, axes = plt.subplots(
        1, len(panels), figsize=(5.0 * len(panels), 3.8), squeeze=False
    )
    series = {}
    for ax, (n, tau) in zip(axes[0], panels):
        for idx, lam in enumerate(lambdas):
            sub = sorted(
                (r for r in rows if r["n"] == n and r["tau"] == tau and r["lambda"] == lam),
                key=lambda r: r["gamma"],
            )
            if not sub:
                continue
            gamma = np.array([r["gamma"] for r in sub])
            ell = np.array([r["ell"] for r in sub])
            upper = np.array([r["u"] for r in sub])
            color = _COLORS[idx % len(_COLORS)]
            ax.fill_between(gamma, ell, upper, color=color, alpha=0.3, linewidth=0)
            ax.plot(gamma, upper, color=color, lw=1.2, label=f"mixture weight {lam:g}")
            ax.plot(gamma, ell, color=color, lw=1.2, ls="--")
            series[(n, tau, lam)] = {"gamma": gamma, "ell": ell, "u": upper}
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("aspect ratio d/n")
        ax.set_ylabel("normalized risk bounds")
        ax.set_title(f"n = {n:g}, snr = {tau:g}")
        ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig, series


def build_fig2(rows):
    """One panel per snr value; per scaling function, the normalized
    functional against the horizon on log-log axes.

    Returns (figure, series) with series[(tau, psi)] = {"T": .., "phi": ..}.
    """
    taus = sorted({r["tau"] for r in rows})
    names = sorted({r["psi"] for r in rows})
    fig, axes = plt.subplots(1, len(taus), figsize=(5.0 * len(taus), 3.8), squeeze=False)
    series = {}
    for ax, tau in zip(axes[0], taus):
        for idx, name in enumerate(names):
            sub = sorted(
                (r for r in rows if r["tau"] == tau and r["psi"] == name),
                key=lambda r: r["T"],
            )
            if not sub:
                continue
            horizon = np.array([r["T"] for r in sub])
            phi = np.array([r["phi_normalized"] for r in sub])
            color = _COLORS[idx % len(_COLORS)]
            ax.plot(horizon, phi, color=color, marker="o", ms=3, lw=1.2, label=name)
            series[(tau, name)] = {"T": horizon, "phi": phi}
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("horizon T")
        ax.set_ylabel("normalized functional")
        ax.set_title(f"snr = {tau:g}")
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return fig, series


def plot(spec: PlotSpec):
    """Render the CSV named by the spec to an image file; returns the plotted
    series (exactly the CSV values, no smoothing)."""
    rows = read_figure_csv(spec.input_csv, spec.kind)
    builder = build_fig1 if spec.kind == "fig1" else build_fig2
    fig, series = builder(rows)
    try:
        if spec.output.endswith(".svg"):
            with plt.rc_context({"svg.hashsalt": "figures"}):
                fig.savefig(spec.output, metadata={"Date": None})
        elif spec.output.endswith(".png"):
            fig.savefig(spec.output, dpi=150, metadata={"Software": None})
        else:
            fig.savefig(spec.output)
    finally:
        plt.close(fig)
    return series
