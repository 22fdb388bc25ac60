"""Figures: a dependency-free SVG overlay plus matplotlib PNG renderings."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

SVG_WIDTH, SVG_HEIGHT, SVG_MARGIN = 800, 360, 40
TRUE_COLOR, PRED_COLOR = "#1f77b4", "#d62728"


def write_prediction_csv(path, t, y_true, y_pred) -> None:
    lines = ["t,y_true,y_pred"]
    for ti, a, b in zip(t, y_true, y_pred):
        lines.append(f"{int(ti)},{float(a)!r},{float(b)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_prediction_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def _points(x, y, x_range, y_range) -> str:
    (x0, x1), (y0, y1) = x_range, y_range
    w = SVG_WIDTH - 2 * SVG_MARGIN
    h = SVG_HEIGHT - 2 * SVG_MARGIN
    px = SVG_MARGIN + (np.asarray(x) - x0) / (x1 - x0 or 1.0) * w
    py = SVG_HEIGHT - SVG_MARGIN - (np.asarray(y) - y0) / (y1 - y0 or 1.0) * h
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))


def prediction_svg(t, y_true, y_pred, title: str = "") -> str:
    """Line chart with exactly two polylines: ground truth and forecast."""
    t = np.asarray(t, dtype=np.float64)
    both = np.concatenate([np.asarray(y_true, float), np.asarray(y_pred, float)])
    x_range = (t.min(), t.max())
    y_range = (both.min(), both.max())
    axis_y = SVG_HEIGHT - SVG_MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<line x1="{SVG_MARGIN}" y1="{axis_y}" x2="{SVG_WIDTH - SVG_MARGIN}" y2="{axis_y}" stroke="black"/>',
        f'<line x1="{SVG_MARGIN}" y1="{SVG_MARGIN}" x2="{SVG_MARGIN}" y2="{axis_y}" stroke="black"/>',
        f'<text x="{SVG_MARGIN}" y="{SVG_MARGIN - 12}" font-size="14">{escape(title)}</text>',
        f'<polyline fill="none" stroke="{TRUE_COLOR}" stroke-width="1.5" '
        f'points="{_points(t, y_true, x_range, y_range)}"><title>y_true</title></polyline>',
        f'<polyline fill="none" stroke="{PRED_COLOR}" stroke-width="1.5" '
        f'points="{_points(t, y_pred, x_range, y_range)}"><title>y_pred</title></polyline>',
        f'<text x="{SVG_WIDTH - 160}" y="{SVG_MARGIN - 12}" font-size="12" fill="{TRUE_COLOR}">truth</text>',
        f'<text x="{SVG_WIDTH - 100}" y="{SVG_MARGIN - 12}" font-size="12" fill="{PRED_COLOR}">prediction</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def write_prediction_svg(path, t, y_true, y_pred, title: str = "") -> None:
    Path(path).write_text(prediction_svg(t, y_true, y_pred, title))


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_predictions(path, t, y_true, y_pred, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(t, y_true, color=TRUE_COLOR, lw=1.2, label="truth")
    ax.plot(t, y_pred, color=PRED_COLOR, lw=1.2, label="prediction")
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training(path, history) -> None:
    """Loss terms and squared gradient norm per step, log scale."""
    plt = _pyplot()
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 3.2))
    steps = history.column("step")
    for name in ("total", "data", "phys", "concept"):
        ax0.semilogy(steps, np.maximum(history.column(name), 1e-300), lw=1, label=name)
    ax0.set_xlabel("step")
    ax0.legend(frameon=False, fontsize=8)
    ax1.semilogy(steps, history.column("grad_norm"), lw=1, color="k")
    ax1.set_xlabel("step")
    ax1.set_ylabel(r"$\|\nabla L\|^2$")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(path, report) -> None:
    plt = _pyplot()
    variants = list(report.test_mse)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(variants, [report.avg_mse[v] for v in variants], color="0.6")
    ax.set_ylabel("test MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
