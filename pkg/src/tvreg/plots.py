"""Figure rendering for the CLI report files.

Uses the object-oriented matplotlib API (no pyplot, no global state), so it
works headless and never touches the interactive backend machinery.
"""

from __future__ import annotations

import io

import numpy as np
import pandas as pd
from matplotlib.figure import Figure


def render_coef_paths_svg(paths: pd.DataFrame, title: str = "") -> bytes:
    """SVG bytes for a mean-line + 95% ribbon plot of coefficient paths.

    ``paths`` needs columns variable, time, mean, lwr, upr (one row per
    variable and time, as written to coef_paths.csv).
    """
    fig = Figure(figsize=(9.0, 5.0))
    ax = fig.subplots()
    for i, (name, grp) in enumerate(paths.groupby("variable", sort=False)):
        grp = grp.sort_values("time")
        color = f"C{i % 10}"
        t = np.asarray(grp["time"], dtype=float)
        ax.fill_between(t, grp["lwr"], grp["upr"], color=color, alpha=0.25, linewidth=0)
        ax.plot(t, grp["mean"], color=color, label=name)
    ax.set_xlabel("time")
    ax.set_ylabel("coefficient")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg")
    return buf.getvalue()


def render_prediction_svg(
    times: np.ndarray, mean: np.ndarray, lwr: np.ndarray, upr: np.ndarray
) -> bytes:
    """SVG fan chart of predictive mean and 95% band over future steps."""
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.subplots()
    ax.fill_between(times, lwr, upr, color="C0", alpha=0.25, linewidth=0)
    ax.plot(times, mean, color="C0", marker="o")
    ax.set_xlabel("steps ahead")
    ax.set_ylabel("prediction")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg")
    return buf.getvalue()
