"""Synthetic scene generation: maps, planned pedestrian tracks, file output.

A scene is an occupancy map (corridor, rooms, or random-blocks layout) plus
pedestrian tracks produced by planning a clearance-respecting shortest grid
path between random start/goal cells, string-pulling it into line-of-sight
segments, resampling to a constant per-pedestrian speed on a 0.4 s grid,
and adding smoothed lateral sway that is shrunk wherever it would erode the
safety margin. Every emitted ground-truth point keeps well clear of
obstacles, so a ground-truth evaluation scores ECFL = 100 by construction.

Generation is a pure function of the spec (including its seed): rerunning
writes byte-identical map, homography, and trajectory files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import dijkstra

from .data import PedestrianTrack, Scene, make_windows, write_tsv
from .gridmap import OccupancyMap, save_homography, save_pgm

__all__ = ["SceneSpec", "generate_scene", "write_scene", "as_scene"]

_LAYOUTS = ("corridor", "rooms", "random-blocks")
_SPEED_FLOOR, _SPEED_CEIL = 0.5, 2.0


@dataclass(frozen=True)
class SceneSpec:
    """Everything that defines one synthetic scene (distances in meters)."""

    layout: str = "corridor"
    width_m: float = 40.0
    height_m: float = 12.0
    meters_per_pixel: float = 0.1
    density: float = 0.1
    n_pedestrians: int = 20
    speed_range: tuple = (0.8, 1.6)
    dt: float = 0.4
    clearance_m: float = 0.5
    jitter_std_m: float = 0.05
    seed: int = 0
    name: str = "scene"

    def __post_init__(self):
        if self.layout not in _LAYOUTS:
            raise ValueError(f"layout must be one of {_LAYOUTS}, got {self.layout!r}")
        lo, hi = self.speed_range
        if not (_SPEED_FLOOR <= lo <= hi <= _SPEED_CEIL):
            raise ValueError(
                f"speed_range must sit inside [{_SPEED_FLOOR}, {_SPEED_CEIL}] m/s, got {self.speed_range}"
            )
        if self.width_m < 5 or self.height_m < 5:
            raise ValueError("scene must be at least 5x5 meters")
        if not 0.0 <= self.density <= 0.8:
            raise ValueError(f"density must be in [0, 0.8], got {self.density}")
        if self.meters_per_pixel <= 0 or self.dt <= 0:
            raise ValueError("meters_per_pixel and dt must be positive")
        if self.n_pedestrians < 1:
            raise ValueError(f"n_pedestrians must be >= 1, got {self.n_pedestrians}")
        if self.jitter_std_m < 0 or self.clearance_m < 0:
            raise ValueError("jitter_std_m and clearance_m must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speed_range"] = list(self.speed_range)
        return d


# ---- map construction -------------------------------------------------------


def _corridor_cells(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    mpp = spec.meters_per_pixel
    h, w = int(round(spec.height_m / mpp)), int(round(spec.width_m / mpp))
    cells = np.ones((h, w), dtype=np.uint8)
    wall = max(2, int(round(0.8 / mpp)))
    cells[:wall, :] = 0
    cells[-wall:, :] = 0
    # sparse square pillars between the walls; shortest paths must commit to
    # a side, which is what gives the benchmark its route multimodality
    n_pillars = int(round(spec.density * spec.width_m))
    if n_pillars:
        interior_lo = wall * mpp
        interior_hi = spec.height_m - wall * mpp
        margin = spec.clearance_m + 0.6
        xs: list[float] = []
        for _ in range(200):
            if len(xs) >= n_pillars:
                break
            x = rng.uniform(3.0, spec.width_m - 3.0)
            if all(abs(x - other) >= 3.0 for other in xs):
                xs.append(x)
        for x in sorted(xs):
            side = rng.uniform(0.8, 1.2)
            half = side / 2.0
            lo = interior_lo + margin + half
            hi = interior_hi - margin - half
            if lo >= hi:
                continue
            y = rng.uniform(lo, hi)
            _fill_rect(cells, x - half, y - half, x + half, y + half, mpp)
    return cells


def _rooms_cells(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    mpp = spec.meters_per_pixel
    h, w = int(round(spec.height_m / mpp)), int(round(spec.width_m / mpp))
    cells = np.ones((h, w), dtype=np.uint8)
    wall = max(2, int(round(0.3 / mpp)))
    cells[:wall, :] = cells[-wall:, :] = 0
    cells[:, :wall] = cells[:, -wall:] = 0
    door_px = int(round(1.8 / mpp))
    # one vertical and one horizontal dividing wall, a door through each span
    cx = w // 2
    cells[:, cx - wall // 2 : cx + wall - wall // 2] = 0
    cy = h // 2
    cells[cy - wall // 2 : cy + wall - wall // 2, :] = 0
    for y0, y1 in ((wall, cy), (cy, h - wall)):
        start = rng.integers(y0 + wall, max(y0 + wall + 1, y1 - wall - door_px))
        cells[start : start + door_px, cx - wall // 2 : cx + wall - wall // 2] = 1
    for x0, x1 in ((wall, cx), (cx, w - wall)):
        start = rng.integers(x0 + wall, max(x0 + wall + 1, x1 - wall - door_px))
        cells[cy - wall // 2 : cy + wall - wall // 2, start : start + door_px] = 1
    return cells


def _blocks_cells(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    mpp = spec.meters_per_pixel
    h, w = int(round(spec.height_m / mpp)), int(round(spec.width_m / mpp))
    cells = np.ones((h, w), dtype=np.uint8)
    wall = max(2, int(round(0.4 / mpp)))
    cells[:wall, :] = cells[-wall:, :] = 0
    cells[:, :wall] = cells[:, -wall:] = 0
    target = spec.density * cells.size
    for _ in range(1000):
        obstacle = (cells == 0).sum()
        if obstacle >= target:
            break
        bw = rng.uniform(1.0, 4.0)
        bh = rng.uniform(1.0, 4.0)
        x0 = rng.uniform(0.5, spec.width_m - bw - 0.5)
        y0 = rng.uniform(0.5, spec.height_m - bh - 0.5)
        _fill_rect(cells, x0, y0, x0 + bw, y0 + bh, mpp)
    return cells


def _fill_rect(cells, x0, y0, x1, y1, mpp) -> None:
    r0, r1 = int(np.floor(y0 / mpp)), int(np.ceil(y1 / mpp))
    c0, c1 = int(np.floor(x0 / mpp)), int(np.ceil(x1 / mpp))
    cells[max(r0, 0) : r1, max(c0, 0) : c1] = 0


def _connected_enough(cells: np.ndarray) -> bool:
    """Largest walkable component must cover at least half the grid."""
    labels, n = ndimage.label(cells == 1, structure=np.ones((3, 3)))
    if n == 0:
        return False
    largest = np.bincount(labels.ravel())[1:].max()
    return largest >= 0.5 * cells.size


_BUILDERS = {
    "corridor": _corridor_cells,
    "rooms": _rooms_cells,
    "random-blocks": _blocks_cells,
}


# ---- planning ---------------------------------------------------------------


class _Planner:
    """Shortest paths on the 8-connected grid restricted to a boolean region."""

    def __init__(self, region: np.ndarray):
        self.region = region
        h, w = region.shape
        self.index = -np.ones((h, w), dtype=np.int64)
        self.nodes = np.argwhere(region)
        self.index[region] = np.arange(len(self.nodes))
        rows, cols, costs = [], [], []
        r, c = self.nodes[:, 0], self.nodes[:, 1]
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
            nr, nc = r + dr, c + dc
            ok = (0 <= nr) & (nr < h) & (0 <= nc) & (nc < w)
            ok[ok] &= region[nr[ok], nc[ok]]
            if dr and dc:
                # no corner cutting: both orthogonal cells must be open too
                ok[ok] &= region[r[ok], nc[ok]] & region[nr[ok], c[ok]]
            a = self.index[r[ok], c[ok]]
            b = self.index[nr[ok], nc[ok]]
            rows.append(a)
            cols.append(b)
            costs.append(np.full(len(a), np.sqrt(2.0) if dr and dc else 1.0))
        n = len(self.nodes)
        if rows:
            data = np.concatenate(costs)
            graph = sparse.coo_matrix(
                (data, (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
            ).tocsr()
        else:
            graph = sparse.csr_matrix((n, n))
        self.graph = graph

    def path_cells(self, start_rc, goal_rc) -> np.ndarray | None:
        s = self.index[start_rc[0], start_rc[1]]
        g = self.index[goal_rc[0], goal_rc[1]]
        if s < 0 or g < 0:
            return None
        dist, pred = dijkstra(
            self.graph, directed=False, indices=s, return_predecessors=True
        )
        if not np.isfinite(dist[g]):
            return None
        chain = [g]
        while chain[-1] != s:
            chain.append(pred[chain[-1]])
        return self.nodes[np.array(chain[::-1])]


def _line_of_sight(clearance: np.ndarray, mpp: float, a, b, min_clear: float) -> bool:
    length = float(np.hypot(b[0] - a[0], b[1] - a[1]))
    n = max(2, int(np.ceil(length / (0.5 * mpp))) + 1)
    xs = np.linspace(a[0], b[0], n)
    ys = np.linspace(a[1], b[1], n)
    cols = np.clip((xs / mpp).astype(np.int64), 0, clearance.shape[1] - 1)
    rows = np.clip((ys / mpp).astype(np.int64), 0, clearance.shape[0] - 1)
    return bool((clearance[rows, cols] >= min_clear).all())


def _string_pull(points: np.ndarray, clearance: np.ndarray, mpp: float, min_clear: float) -> np.ndarray:
    """Greedy line-of-sight simplification of a dense grid path.

    From each kept vertex, a doubling-then-bisection search finds a far
    visible node; every accepted segment passed the clearance check, so the
    result is safe even where visibility is not monotone along the path.
    """
    out = [points[0]]
    i = 0
    n = len(points)
    while i < n - 1:
        if _line_of_sight(clearance, mpp, points[i], points[n - 1], min_clear):
            out.append(points[n - 1])
            break
        step = 1
        while i + 2 * step < n - 1 and _line_of_sight(
            clearance, mpp, points[i], points[i + 2 * step], min_clear
        ):
            step *= 2
        lo, hi = step, min(2 * step, n - 1 - i)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if _line_of_sight(clearance, mpp, points[i], points[i + mid], min_clear):
                lo = mid
            else:
                hi = mid - 1
        i += max(1, lo)
        out.append(points[i])
    return np.array(out)


def _resample(points: np.ndarray, step: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total < step:
        return points[:1].copy()
    targets = np.arange(0.0, total + 1e-9, step)
    x = np.interp(targets, s, points[:, 0])
    y = np.interp(targets, s, points[:, 1])
    return np.stack([x, y], axis=-1)


def _smoothed_noise(rng: np.random.Generator, n: int, std: float) -> np.ndarray:
    raw = rng.standard_normal(n + 6)
    kernel = np.ones(7) / 7.0
    smooth = np.convolve(raw, kernel, mode="valid")
    cur = smooth.std()
    if cur < 1e-12:
        return np.zeros(n)
    return smooth[:n] * (std / cur)


# ---- scene generation ----------------------------------------------------------


def generate_scene(spec: SceneSpec) -> tuple[OccupancyMap, list[PedestrianTrack]]:
    """Build the map and pedestrian tracks for `spec`.

    Raises ValueError when the layout cannot satisfy the connectivity
    requirement (e.g. density too high). Pedestrians whose start/goal
    sampling or planning fails after 50 attempts are skipped.
    """
    mpp = spec.meters_per_pixel
    cells = None
    for attempt in range(20):
        rng_map = np.random.default_rng(
            np.random.SeedSequence((spec.seed, 0, attempt))
        )
        candidate = _BUILDERS[spec.layout](spec, rng_map)
        if _connected_enough(candidate):
            cells = candidate
            break
    if cells is None:
        raise ValueError(
            f"layout {spec.layout!r} with density {spec.density} failed the connectivity requirement"
        )
    homography = np.diag([1.0 / mpp, 1.0 / mpp, 1.0])
    occ_map = OccupancyMap(cells, homography)

    clearance = ndimage.distance_transform_edt(cells == 1) * mpp
    region = clearance >= spec.clearance_m
    labels, n_regions = ndimage.label(region, structure=np.ones((3, 3)))
    if n_regions:
        keep = np.argmax(np.bincount(labels.ravel())[1:]) + 1
        region = labels == keep
    if region.any():
        planner = _Planner(region)
        min_clear_los = 0.9 * spec.clearance_m
    else:
        # no cell satisfies the clearance; fall back to plain walkable space
        region = cells == 1
        planner = _Planner(region)
        min_clear_los = 0.0
    min_sep = 0.4 * max(spec.width_m, spec.height_m)

    tracks: list[PedestrianTrack] = []
    for ped in range(spec.n_pedestrians):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 1, ped)))
        track = _generate_track(
            spec, occ_map, clearance, planner, region, rng, min_sep, min_clear_los
        )
        if track is not None:
            tracks.append(PedestrianTrack(ped_id=ped + 1, frames=np.arange(len(track)) * 10, points=track))
    return occ_map, tracks


def _generate_track(
    spec, occ_map, clearance, planner, region, rng, min_sep, min_clear_los
) -> np.ndarray | None:
    mpp = spec.meters_per_pixel
    use = planner
    candidates = np.argwhere(region)
    if len(candidates) < 2:
        return None
    for _ in range(50):
        a = candidates[rng.integers(len(candidates))]
        b = candidates[rng.integers(len(candidates))]
        if np.hypot(*(a - b)) * mpp < min_sep:
            continue
        cells_path = use.path_cells(a, b)
        if cells_path is None:
            continue
        pts = (cells_path[:, ::-1] + 0.5) * mpp  # (col,row) -> world x,y
        pts = _string_pull(pts, clearance, mpp, min_clear_los)
        speed = rng.uniform(*spec.speed_range)
        walked = _resample(pts, speed * spec.dt)
        if walked.shape[0] < 20:
            continue
        jitter = _smoothed_noise(rng, walked.shape[0], spec.jitter_std_m)
        tangent = np.gradient(walked, axis=0)
        norm = np.linalg.norm(tangent, axis=1, keepdims=True)
        tangent = tangent / np.maximum(norm, 1e-12)
        normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=-1)
        factor = np.ones(walked.shape[0])
        final = walked
        for _ in range(12):
            final = walked + (jitter * factor)[:, None] * normal
            cols = np.clip((final[:, 0] / mpp).astype(np.int64), 0, clearance.shape[1] - 1)
            rows = np.clip((final[:, 1] / mpp).astype(np.int64), 0, clearance.shape[0] - 1)
            bad = clearance[rows, cols] < 0.3
            if not bad.any():
                break
            factor[bad] *= 0.5
        else:
            final = walked
        if bool(occ_map.is_obstacle(final).any()):
            continue
        return final
    return None


def as_scene(
    occ_map: OccupancyMap,
    tracks: list[PedestrianTrack],
    name: str,
    t_obs: int = 8,
    t_pred: int = 12,
    stride: int = 1,
) -> Scene:
    """Wrap generated tracks as a training/eval scene without touching disk."""
    windows = make_windows(tracks, t_obs, t_pred, stride, scene=name)
    return Scene(name=name, occ_map=occ_map, windows=windows)


def write_scene(
    out_dir, spec: SceneSpec, occ_map: OccupancyMap, tracks: list[PedestrianTrack]
) -> dict:
    """Write map/homography/trajectories plus a manifest; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "map": out / f"{spec.name}.pgm",
        "homography": out / f"{spec.name}_homography.txt",
        "trajectories": out / f"{spec.name}.tsv",
        "manifest": out / f"{spec.name}_manifest.json",
    }
    save_pgm(paths["map"], occ_map.cells * 255)
    save_homography(paths["homography"], occ_map.h)
    write_tsv(paths["trajectories"], tracks)
    manifest = {
        "scenes": [
            {
                "name": spec.name,
                "trajectories": paths["trajectories"].name,
                "map": paths["map"].name,
                "homography": paths["homography"].name,
            }
        ],
        "spec": spec.to_dict(),
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths
