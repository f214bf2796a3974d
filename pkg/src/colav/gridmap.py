"""Occupancy grid maps: PGM I/O, world/pixel projection, contours, patches.

Maps are binary grids (0 = obstacle, 1 = walkable) tied to world coordinates
by a 3x3 homography that sends homogeneous world points (meters) to
continuous pixel coordinates. The pixel convention used everywhere: the
first pixel axis is the column (x-like), the second the row (y-like), and a
continuous coordinate falls into the cell given by floor(), so pixel
(3.2, 4.5) lands in column 3, row 4 of ``cells[row, col]``. Anything outside
the grid is treated as an obstacle.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MapFormatError",
    "ProjectionError",
    "OccupancyMap",
    "MapPatch",
    "load_map",
    "load_pgm",
    "save_pgm",
    "load_homography",
    "save_homography",
]


class MapFormatError(ValueError):
    """Raised for malformed PGM or homography files."""


class ProjectionError(ValueError):
    """Raised when a homography projection degenerates (w ~ 0)."""


@dataclass(frozen=True)
class MapPatch:
    """A local, heading-aligned crop of an occupancy map.

    ``grid[i, j]`` is 1 for walkable, 0 for obstacle (or out of bounds).
    Row 0 is the far-forward edge: the patch "up" axis points along
    ``heading``, so a wall ahead of the pedestrian shows up in the top rows.
    """

    grid: np.ndarray
    center: np.ndarray
    heading: float
    cell_size: float


class OccupancyMap:
    """Binary occupancy grid with a world-to-pixel homography.

    Parameters
    ----------
    cells : ndarray of shape (height, width)
        Values must be exactly 0 (obstacle) or 1 (walkable).
    world_to_pixel_h : ndarray of shape (3, 3)
        Invertible homography taking homogeneous world meters to pixels.
    """

    def __init__(self, cells: np.ndarray, world_to_pixel_h: np.ndarray):
        cells = np.asarray(cells)
        if cells.ndim != 2 or cells.shape[0] < 2 or cells.shape[1] < 2:
            raise ValueError(f"cells must be 2-D and at least 2x2, got {cells.shape}")
        if not np.isin(cells, (0, 1)).all():
            raise ValueError("cells must contain only 0 (obstacle) and 1 (walkable)")
        h = np.asarray(world_to_pixel_h, dtype=np.float64)
        if h.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {h.shape}")
        det = np.linalg.det(h)
        if abs(det) <= 1e-12:
            raise ValueError(f"homography is singular (|det| = {abs(det):.3e})")
        self.cells = cells.astype(np.uint8)
        self.h = h
        self.h_inv = np.linalg.inv(h)
        self._contours: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    # ---- projection --------------------------------------------------------

    def world_to_pixel(self, points: np.ndarray) -> np.ndarray:
        """Project world points (..., 2) to continuous pixel coords (..., 2)."""
        return _project(self.h, points)

    def pixel_to_world(self, pixels: np.ndarray) -> np.ndarray:
        """Inverse projection, continuous pixels (..., 2) to world meters."""
        return _project(self.h_inv, pixels)

    def is_obstacle(self, points: np.ndarray) -> np.ndarray:
        """Occupancy lookup for world points (..., 2) -> bool (...).

        The containing cell is found by flooring the projected pixel
        coordinate; out-of-bounds points count as obstacles.
        """
        pix = self.world_to_pixel(points)
        col = np.floor(pix[..., 0]).astype(np.int64)
        row = np.floor(pix[..., 1]).astype(np.int64)
        inside = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        out = np.ones(np.shape(col), dtype=bool)
        if np.any(inside):
            out[inside] = self.cells[row[inside], col[inside]] == 0
        if out.ndim == 0:
            return out[()]
        return out

    # ---- derived geometry ---------------------------------------------------

    def extract_contours(self) -> np.ndarray:
        """World-space centers of boundary obstacle cells, shape (M, 2).

        A cell belongs to the contour set when it is an obstacle and at
        least one of its 4-neighbors inside the grid is walkable. Points
        come out in row-major cell order, so repeated calls are identical.
        """
        if self._contours is not None:
            return self._contours
        obs = self.cells == 0
        walk = self.cells == 1
        padded = np.pad(walk, 1, constant_values=False)
        near_walkable = (
            padded[:-2, 1:-1] | padded[2:, 1:-1] | padded[1:-1, :-2] | padded[1:-1, 2:]
        )
        rows, cols = np.nonzero(obs & near_walkable)
        centers_pix = np.stack([cols + 0.5, rows + 0.5], axis=-1)
        if centers_pix.size == 0:
            self._contours = np.zeros((0, 2))
        else:
            self._contours = self.pixel_to_world(centers_pix)
        return self._contours

    def extract_patch(
        self,
        center: np.ndarray,
        heading: float,
        size: int = 32,
        cell_size: float = 0.25,
        forward_offset: float = 2.0,
    ) -> MapPatch:
        """Heading-aligned local occupancy crop around `center`.

        The sampled region is centered ``forward_offset`` meters ahead of
        `center` along `heading`; cells outside the map fill in as obstacle.
        """
        grid = self.patch_stack(
            np.asarray(center, dtype=np.float64)[None, :],
            np.asarray([heading], dtype=np.float64),
            size=size,
            cell_size=cell_size,
            forward_offset=forward_offset,
        )[0]
        fwd = np.array([np.cos(heading), np.sin(heading)])
        eff_center = np.asarray(center, dtype=np.float64) + forward_offset * fwd
        return MapPatch(grid=grid, center=eff_center, heading=float(heading), cell_size=cell_size)

    def patch_stack(
        self,
        centers: np.ndarray,
        headings: np.ndarray,
        size: int = 32,
        cell_size: float = 0.25,
        forward_offset: float = 2.0,
    ) -> np.ndarray:
        """Vectorized extract_patch: (B, 2) centers, (B,) headings -> (B, S, S)."""
        centers = np.asarray(centers, dtype=np.float64)
        headings = np.asarray(headings, dtype=np.float64)
        half = (size - 1) / 2.0
        ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        u = (jj - half) * cell_size          # right of heading
        v = (half - ii) * cell_size          # along heading, row 0 farthest
        fwd = np.stack([np.cos(headings), np.sin(headings)], axis=-1)
        right = np.stack([np.sin(headings), -np.cos(headings)], axis=-1)
        eff = centers + forward_offset * fwd
        world = (
            eff[:, None, None, :]
            + v[None, :, :, None] * fwd[:, None, None, :]
            + u[None, :, :, None] * right[:, None, None, :]
        )
        return (~self.is_obstacle(world)).astype(np.float64)


def _project(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 2:
        raise ValueError(f"points must have a trailing axis of 2, got {pts.shape}")
    x, y = pts[..., 0], pts[..., 1]
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if np.any(np.abs(w) < 1e-12):
        raise ProjectionError("projection denominator vanished (|w| < 1e-12)")
    u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
    v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
    return np.stack([u, v], axis=-1)


# ---- file I/O ---------------------------------------------------------------


def load_pgm(path) -> np.ndarray:
    """Read a PGM image (P2 ASCII or P5 binary) as a uint8 gray array."""
    raw = Path(path).read_bytes()
    magic, tokens, data_offset = _parse_pgm_header(raw, path)
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise MapFormatError(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise MapFormatError(f"{path}: bad maxval {maxval}")
    n = width * height
    if magic == b"P2":
        try:
            values = np.array(raw[data_offset:].split(), dtype=np.int64)
        except ValueError as e:
            raise MapFormatError(f"{path}: non-numeric P2 pixel data ({e})") from None
    else:
        if maxval > 255:
            raise MapFormatError(f"{path}: P5 with maxval > 255 not supported")
        body = raw[data_offset : data_offset + n]
        values = np.frombuffer(body, dtype=np.uint8).astype(np.int64)
    if values.size != n:
        raise MapFormatError(
            f"{path}: expected {n} pixels, found {values.size}"
        )
    if values.min() < 0 or values.max() > maxval:
        raise MapFormatError(f"{path}: pixel value outside [0, {maxval}]")
    return values.reshape(height, width).astype(np.uint8)


def _parse_pgm_header(raw: bytes, path) -> tuple[bytes, tuple[int, int, int], int]:
    if raw[:2] not in (b"P2", b"P5"):
        raise MapFormatError(f"{path}: not a P2/P5 PGM (magic {raw[:2]!r})")
    magic = raw[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token:
            raise MapFormatError(f"{path}: truncated PGM header")
        try:
            fields.append(int(token))
        except ValueError:
            raise MapFormatError(f"{path}: bad header token {token!r}") from None
    return magic, (fields[0], fields[1], fields[2]), pos + 1


def save_pgm(path, gray: np.ndarray) -> None:
    """Write a uint8 gray array as binary P5. Byte-identical per content."""
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError(f"gray image must be 2-D, got {gray.shape}")
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + gray.tobytes())


def load_homography(path) -> np.ndarray:
    """Read 9 whitespace-separated numbers (row-major 3x3)."""
    try:
        vals = np.array(Path(path).read_text().split(), dtype=np.float64)
    except ValueError as e:
        raise MapFormatError(f"{path}: non-numeric homography entry ({e})") from None
    if vals.size != 9:
        raise MapFormatError(f"{path}: expected 9 homography values, found {vals.size}")
    return vals.reshape(3, 3)


def save_homography(path, h: np.ndarray) -> None:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {h.shape}")
    # repr of a Python float round-trips exactly; numpy scalar repr does not parse
    rows = "\n".join(" ".join(repr(float(v)) for v in row) for row in h)
    Path(path).write_text(rows + "\n")


def load_map(map_path, homography_path) -> OccupancyMap:
    """Load a PGM occupancy map plus its homography sidecar.

    Gray values below 128 become obstacles (0), the rest walkable (1).
    """
    gray = load_pgm(map_path)
    cells = (gray >= 128).astype(np.uint8)
    return OccupancyMap(cells, load_homography(homography_path))
