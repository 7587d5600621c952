"""Static SVG figures for drift sweeps, residual orders and kernel spectra.

Figures are rendered with the Agg backend and saved with a fixed SVG hash
salt and no date metadata, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_KINDS = ("drift", "residual-order", "kernel-gap")

golden_mean = (math.sqrt(5) - 1.0) / 2.0
fig_width = 4.5
params = {
    "svg.hashsalt": "cmcbubble",
    "svg.fonttype": "path",
    "font.family": "serif",
    "font.serif": ["DejaVu Serif"],
    "mathtext.fontset": "dejavuserif",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.subplot.left": 0.16,
    "figure.subplot.bottom": 0.17,
    "figure.subplot.right": 0.96,
    "figure.subplot.top": 0.92,
    "axes.prop_cycle": matplotlib.cycler(color=["#08589e", "#c2410c", "#4d7c0f", "#7e22ce"]),
}


class SchemaMismatch(ValueError):
    """The results file does not carry the data the plot kind needs."""


def _need(data: dict, *keys: str):
    missing = [k for k in keys if k not in data]
    if missing:
        raise SchemaMismatch(f"results lack key(s) {missing}")
    return [data[k] for k in keys]


def _reference(ax, x, anchor_x, anchor_y, slope, label):
    x = np.asarray(x, dtype=float)
    ax.plot(x, anchor_y * (x / anchor_x) ** slope, ls="--", lw=0.9, color="0.45", label=label)


def plot_drift(data: dict, ax) -> None:
    (rows,) = _need(data, "rows")
    if not rows:
        raise SchemaMismatch("drift results contain no rows")
    eps = np.array([r["eps"] for r in rows], dtype=float)
    force = np.array([r["force"] for r in rows], dtype=float)
    for l in range(force.shape[1]):
        mag = np.abs(force[:, l])
        if np.all(mag > 0):
            ax.loglog(eps, mag, marker="o", label=rf"$|F_{l + 1}|$")
    lead = int(np.argmax(np.abs(force[-1])))
    _reference(ax, eps, eps[-1], abs(force[-1, lead]), 3, r"$\propto\varepsilon^3$")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel(f"projected force ({data.get('projection', 'kernel')})")
    ax.legend(frameon=False)


def plot_residual_order(data: dict, ax) -> None:
    series = data.get("data", data)
    eps, unc, cor = _need(series, "eps", "uncorrected", "corrected")
    eps = np.asarray(eps, dtype=float)
    if eps.size == 0:
        raise SchemaMismatch("residual-order results contain no samples")
    ax.loglog(eps, unc, marker="s", label="uncorrected bubble")
    ax.loglog(eps, cor, marker="o", label="corrected bubble")
    _reference(ax, eps, eps[-1], unc[-1], 2, r"slope 2")
    _reference(ax, eps, eps[-1], cor[-1], 3, r"slope 3")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel("max residual (floor removed)")
    ax.legend(frameon=False)


def plot_kernel_gap(data: dict, ax) -> None:
    series = data.get("data", data)
    (sv,) = _need(series, "singular_values")
    sv = np.asarray(sv, dtype=float)
    if sv.size == 0:
        raise SchemaMismatch("kernel-gap results contain no singular values")
    k = np.arange(1, sv.size + 1)
    ax.semilogy(k, sv, marker="o", ls="none")
    dim = series.get("dimension")
    if dim:
        ax.axvline(dim + 0.5, ls=":", color="0.45")
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")


_PLOTTERS = {"drift": plot_drift, "residual-order": plot_residual_order, "kernel-gap": plot_kernel_gap}


def render(data: dict, kind: str, out_path: str) -> str:
    if kind not in _PLOTTERS:
        raise ValueError(f"kind must be one of {PLOT_KINDS}")
    if not isinstance(data, dict) or not data:
        raise SchemaMismatch("results file is empty")
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        try:
            _PLOTTERS[kind](data, ax)
            fig.savefig(out_path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return out_path


def render_file(result_path: str, kind: str, out_path: str) -> str:
    with open(result_path) as fh:
        text = fh.read()
    if not text.strip():
        raise SchemaMismatch("results file is empty")
    return render(json.loads(text), kind, out_path)


__all__ = ["PLOT_KINDS", "SchemaMismatch", "params", "render", "render_file"]
