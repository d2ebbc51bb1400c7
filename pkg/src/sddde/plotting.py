"""Static SVG line charts.  Figures are built without pyplot so they are thread-safe,
and saved with a fixed hash salt and no date so identical data gives identical bytes."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

SVG_SALT = "sddde"


def save_svg(fig: Figure, path, description: str) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Description": description})


def trajectory_figure(t, w, v, t_tau=None, tau=None, title: str = "") -> Figure:
    """w, v and (optionally) the delay tau(v_t) against time, one panel each."""
    rows = 3 if tau is not None else 2
    fig = Figure(figsize=(7.0, 2.2 * rows))
    axes = fig.subplots(rows, 1, sharex=True)
    axes[0].plot(t, w, color="tab:blue", lw=1.2)
    axes[0].set_ylabel("w(t)")
    axes[1].plot(t, v, color="tab:red", lw=1.2)
    axes[1].set_ylabel("v(t)")
    if tau is not None:
        axes[2].plot(t_tau, tau, color="tab:green", lw=1.2)
        axes[2].set_ylabel("tau(v_t)")
    axes[-1].set_xlabel("t")
    for ax in axes:
        ax.grid(alpha=0.3)
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    return fig


def bounds_figure(t, curves: dict, title: str = "") -> Figure:
    """Overlay of named bound curves, e.g. f_l, f_tau and the two ratios."""
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.subplots()
    for name, y in curves.items():
        ax.plot(t, np.asarray(y), lw=1.2, label=name)
    ax.set_xlabel("t")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig
