"""Deterministic SVG rendering of scenes and predictions (cli plumbing).

Everything is drawn in pixel coordinates (SVG y-down matches the grid's row
axis), with world-space inputs projected through the map homography. Output
bytes are a pure function of the inputs: fixed float formatting, no
timestamps, stable element order.
"""

from __future__ import annotations

import numpy as np

from .gridmap import OccupancyMap

__all__ = ["render_svg"]

_OBSTACLE = "#3d4043"
_PAST = "#1f77b4"
_GT = "#2ca02c"
_SAMPLE = "#9aa0a6"
_HIT = "#d62728"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _polyline(pix: np.ndarray, color: str, width: float, dash: str = "", opacity: float = 1.0) -> str:
    pts = " ".join(f"{_fmt(p[0])},{_fmt(p[1])}" for p in pix)
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    op_attr = f' stroke-opacity="{opacity:g}"' if opacity != 1.0 else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{_fmt(width)}"'
        f"{dash_attr}{op_attr} points=\"{pts}\"/>"
    )


def _obstacle_rects(occ_map: OccupancyMap) -> list[str]:
    """Merge horizontal obstacle runs into rects to keep files small."""
    rects = []
    for row in range(occ_map.height):
        line = occ_map.cells[row] == 0
        if not line.any():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate([[0], line.view(np.int8), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            rects.append(
                f'<rect x="{start}" y="{row}" width="{stop - start}" height="1"/>'
            )
    return rects


def render_svg(
    occ_map: OccupancyMap,
    past: np.ndarray | None = None,
    future: np.ndarray | None = None,
    preds: np.ndarray | None = None,
    collide: np.ndarray | None = None,
    max_agents: int | None = None,
) -> str:
    """Render a scene to an SVG string.

    `past` (B, T_obs, 2) and `future` (B, T_pred, 2) are world meters;
    `preds` (B, K, T, 2) are sampled futures, drawn thin and highlighted in
    red where `collide` (B, K) flags a collision. Any of them may be None;
    a bare map is valid output.
    """
    w, h = occ_map.width, occ_map.height
    stroke = max(1.0, min(w, h) / 120.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="#fafafa"/>',
        f'<g fill="{_OBSTACLE}">',
    ]
    parts.extend(_obstacle_rects(occ_map))
    parts.append("</g>")
    n = 0 if past is None else past.shape[0]
    if max_agents is not None:
        n = min(n, max_agents)
    for i in range(n):
        if preds is not None:
            for k in range(preds.shape[1]):
                hit = collide is not None and bool(collide[i, k])
                parts.append(
                    _polyline(
                        occ_map.world_to_pixel(preds[i, k]),
                        _HIT if hit else _SAMPLE,
                        stroke * (0.8 if hit else 0.5),
                        opacity=0.9 if hit else 0.6,
                    )
                )
        if future is not None:
            parts.append(
                _polyline(
                    occ_map.world_to_pixel(future[i]),
                    _GT,
                    stroke * 0.9,
                    dash=f"{_fmt(stroke * 1.5)} {_fmt(stroke * 1.2)}",
                )
            )
        if past is not None:
            parts.append(_polyline(occ_map.world_to_pixel(past[i]), _PAST, stroke))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
