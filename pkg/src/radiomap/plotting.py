"""Figures written next to the CLI's tabular outputs.

Everything draws on standalone Agg figures (no pyplot state) so repeated
runs produce identical PNG bytes.
"""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .field import as_db

PNG_METADATA = {"Software": None}


def new_figure(n_panels=1, panel_size=4.0):
    fig = Figure(figsize=(panel_size * n_panels + 0.6 * n_panels, panel_size))
    FigureCanvasAgg(fig)
    axes = fig.subplots(1, n_panels, squeeze=False)[0]
    return fig, list(axes)


def save_figure(fig, path, dpi=90):
    fig.savefig(path, dpi=dpi, metadata=PNG_METADATA)


def _extent_km(geometry):
    x0, y0, x1, y1 = geometry.bounds
    return (x0 / 1e3, x1 / 1e3, y0 / 1e3, y1 / 1e3)


def show_grid(ax, grid, title="", vmin=None, vmax=None, cmap="viridis", label="dBW"):
    im = ax.imshow(grid.values, extent=_extent_km(grid.geometry), origin="upper",
                   vmin=vmin, vmax=vmax, cmap=cmap, interpolation="nearest")
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("x (km)")
    ax.set_ylabel("y (km)")
    cb = ax.figure.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    cb.set_label(label)
    return im


def mark_points(ax, xy, style="k.", size=3, label=None):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if len(xy):
        ax.plot(xy[:, 0] / 1e3, xy[:, 1] / 1e3, style, markersize=size, label=label)


def draw_obstacles(ax, obstacles):
    for ob in obstacles:
        ax.plot([ob.start[0] / 1e3, ob.end[0] / 1e3], [ob.start[1] / 1e3, ob.end[1] / 1e3],
                color="white", linewidth=1.2)


def _db_range(grids, floor_span=60.0):
    vals = np.concatenate([g.values.ravel() for g in grids])
    hi = float(np.percentile(vals, 99.5))
    return hi - floor_span, hi


def truth_figure(truth, scenario):
    truth = as_db(truth)
    fig, axes = new_figure(truth.n_channels)
    vmin, vmax = _db_range(truth.grids)
    for k, ax in enumerate(axes):
        show_grid(ax, truth[k], f"ground truth, channel {k}", vmin, vmax)
        draw_obstacles(ax, scenario.obstacles)
        mark_points(ax, [t.position for t in scenario.transmitters if t.channel_index == k], "r^", 6)
    fig.tight_layout()
    return fig


def comparison_figure(truth, estimates, sensors_xy, channel=0, tx_marks=None):
    """Truth with sensor layout, then one panel per estimated map, shared color scale."""
    truth = as_db(truth)
    names = list(estimates)
    fig, axes = new_figure(1 + len(names))
    vmin, vmax = _db_range([truth[channel]])
    show_grid(axes[0], truth[channel], "ground truth + sensors", vmin, vmax)
    mark_points(axes[0], sensors_xy, "w.", 2)
    for ax, name in zip(axes[1:], names):
        show_grid(ax, as_db(estimates[name])[channel], name, vmin, vmax)
        if tx_marks and name in tx_marks:
            mark_points(ax, tx_marks[name], "rx", 6)
    fig.tight_layout()
    return fig


def error_figure(errors_by_method, channel=0, span=20.0):
    names = list(errors_by_method)
    fig, axes = new_figure(len(names))
    for ax, name in zip(axes, names):
        show_grid(ax, errors_by_method[name][channel], f"{name} error", -span, span, cmap="RdBu_r",
                  label="dB")
    fig.tight_layout()
    return fig


def dead_zone_figure(sinr_db, dead_mask, threshold_db):
    fig, axes = new_figure(2)
    show_grid(axes[0], sinr_db, "best-server SINR", threshold_db - 20, threshold_db + 30,
              cmap="magma", label="dB")
    show_grid(axes[1], dead_mask, f"dead zones (SINR < {threshold_db:g} dB)", 0, 1, cmap="Greys",
              label="dead")
    fig.tight_layout()
    return fig


def route_figure(traces, threshold_db):
    fig, axes = new_figure(1, panel_size=5.0)
    ax = axes[0]
    for name, sinr in traces.items():
        ax.plot(np.arange(len(sinr)), sinr, marker="o", markersize=3, label=name)
    ax.axhline(threshold_db, color="k", linestyle="--", linewidth=1, label="threshold")
    ax.set_xlabel("waypoint")
    ax.set_ylabel("SINR (dB)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def anomaly_figure(z, flags, clusters, rogue=None, true_position=None):
    fig, axes = new_figure(2)
    show_grid(axes[0], z, "z-score vs history", -10, 10, cmap="RdBu_r", label="z")
    show_grid(axes[1], flags, "flagged cells", 0, 1, cmap="Greys", label="flag")
    mark_points(axes[1], [c.centroid for c in clusters], "b+", 8)
    if rogue is not None:
        mark_points(axes[1], [rogue.position], "rx", 8)
    if true_position is not None:
        mark_points(axes[1], [true_position], "go", 5)
    fig.tight_layout()
    return fig
