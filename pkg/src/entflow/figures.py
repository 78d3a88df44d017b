"""Tiny deterministic SVG emitter for 2D scatter plots with mode markers.

No plotting library is used: the output depends only on the inputs,
byte for byte, and embeds no fonts or timestamps.
"""

from __future__ import annotations

import numpy as np

__all__ = ["emit_scatter_figure", "scatter_svg"]

_SIZE = 640.0
_PAD = 40.0


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def scatter_svg(samples: np.ndarray, mode_list: np.ndarray | None = None) -> str:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        samples = np.empty((0, 2))
    else:
        samples = np.atleast_2d(samples)
        if samples.ndim != 2 or samples.shape[1] != 2:
            raise ValueError("samples must be n x 2; project higher-dimensional data to 2D first")
    modes = None
    if mode_list is not None and np.size(mode_list):
        modes = np.asarray(mode_list, dtype=float).reshape(-1, 2)

    stacked = [p for p in (samples, modes) if p is not None and p.size]
    if stacked:
        allpts = np.vstack(stacked)
        lo = allpts.min(axis=0)
        hi = allpts.max(axis=0)
    else:
        lo = np.array([-1.0, -1.0])
        hi = np.array([1.0, 1.0])
    span = np.maximum(hi - lo, 1e-9)
    margin = 0.05 * span
    lo = lo - margin
    hi = hi + margin
    span = hi - lo
    inner = _SIZE - 2.0 * _PAD

    def to_px(pts: np.ndarray) -> np.ndarray:
        unit = (pts - lo) / span
        x = _PAD + unit[:, 0] * inner
        y = _SIZE - _PAD - unit[:, 1] * inner  # SVG y axis points down
        return np.column_stack([x, y])

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(_SIZE)}" height="{int(_SIZE)}" '
        f'viewBox="0 0 {int(_SIZE)} {int(_SIZE)}">',
        f'<rect x="{_fmt(_PAD)}" y="{_fmt(_PAD)}" width="{_fmt(inner)}" height="{_fmt(inner)}" '
        'fill="white" stroke="black" stroke-width="1"/>',
    ]
    if samples.size:
        for x, y in to_px(samples):
            parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="1.6" fill="#1f77b4" fill-opacity="0.55"/>')
    if modes is not None:
        arm = 6.0
        for x, y in to_px(modes):
            parts.append(
                f'<path d="M {_fmt(x - arm)} {_fmt(y)} L {_fmt(x + arm)} {_fmt(y)} '
                f'M {_fmt(x)} {_fmt(y - arm)} L {_fmt(x)} {_fmt(y + arm)}" '
                'stroke="#d62728" stroke-width="2" fill="none"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_scatter_figure(samples: np.ndarray, mode_list: np.ndarray | None, path) -> None:
    """Write the scatter SVG; identical inputs give identical bytes."""
    text = scatter_svg(samples, mode_list)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
