"""Minimal hand-rolled SVG output: scatter plots and trajectory polylines.

Figures are diagnostics; no plotting dependency is worth carrying for them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


class SvgCanvas:
    def __init__(self, width=480, height=480, pad=24):
        self.width = width
        self.height = height
        self.pad = pad
        self.elements: list[str] = []
        self._bounds = None

    def fit(self, points: np.ndarray):
        """Expand the data window to cover the given (n, 2) points."""
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        if self._bounds is None:
            self._bounds = [lo, hi]
        else:
            self._bounds = [
                np.minimum(self._bounds[0], lo),
                np.maximum(self._bounds[1], hi),
            ]

    def _tx(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self._bounds
        span = np.maximum(hi - lo, 1e-9)
        unit = (pts - lo) / span
        x = self.pad + unit[:, 0] * (self.width - 2 * self.pad)
        y = self.height - self.pad - unit[:, 1] * (self.height - 2 * self.pad)
        return np.stack([x, y], axis=1)

    def scatter(self, points: np.ndarray, color=_COLORS[0], radius=1.6,
                opacity=0.8):
        for px, py in self._tx(np.asarray(points, dtype=float)):
            self.elements.append(
                f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{radius}" '
                f'fill="{color}" fill-opacity="{opacity}"/>'
            )

    def polyline(self, points: np.ndarray, color=_COLORS[1], width=1.0,
                 opacity=0.9):
        pts = " ".join(
            f"{px:.2f},{py:.2f}"
            for px, py in self._tx(np.asarray(points, dtype=float))
        )
        self.elements.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"/>'
        )

    def text(self, label: str, x=8, y=16):
        self.elements.append(
            f'<text x="{x}" y="{y}" font-family="monospace" '
            f'font-size="12">{label}</text>'
        )

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        body = "\n".join(self.elements)
        path.write_text(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} '
            f'{self.height}">\n<rect width="100%" height="100%" '
            f'fill="white"/>\n{body}\n</svg>\n'
        )
        return path


def plot_scatter(path, clouds, labels=None, title=""):
    """Scatter one or more point clouds into an SVG file."""
    canvas = SvgCanvas()
    clouds = [np.asarray(c, dtype=float) for c in clouds]
    for cloud in clouds:
        canvas.fit(cloud)
    for i, cloud in enumerate(clouds):
        canvas.scatter(cloud, color=_COLORS[i % len(_COLORS)])
    if title:
        canvas.text(title)
    if labels:
        for i, lab in enumerate(labels):
            canvas.text(lab, y=16 * (i + 2))
    return canvas.write(path)


def plot_trajectories(path, states, n_lines=64, title=""):
    """Polyline per sample from a stacked (N+1, n, d) trajectory array,
    endpoints scattered on top."""
    states = np.asarray(states, dtype=float)
    canvas = SvgCanvas()
    canvas.fit(states.reshape(-1, states.shape[-1]))
    step = max(1, states.shape[1] // n_lines)
    for j in range(0, states.shape[1], step):
        canvas.polyline(states[:, j, :], color="#bbbbbb", width=0.7)
    canvas.scatter(states[0], color=_COLORS[0])
    canvas.scatter(states[-1], color=_COLORS[1])
    if title:
        canvas.text(title)
    return canvas.write(path)
