"""Trajectory file loading, windowing, and scene manifests.

Trajectory files are whitespace-separated text rows ``frame ped_id x y``
(the ETH/UCY convention), one observation per row, positions in world
meters. Rows may arrive in any order; observations are grouped per
pedestrian and sorted by frame. Pedestrians whose frame spacing is not
uniform are split into separate tracks at each gap, never interpolated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridmap import OccupancyMap, load_map

__all__ = [
    "TrajectoryFormatError",
    "PedestrianTrack",
    "TrajectoryWindow",
    "Scene",
    "load_trajectories",
    "make_windows",
    "stack_windows",
    "load_manifest",
    "load_scenes",
    "write_tsv",
]


class TrajectoryFormatError(ValueError):
    """Raised for unparseable trajectory rows (message carries the line number)."""


@dataclass
class PedestrianTrack:
    """One pedestrian's contiguous, uniformly spaced observations."""

    ped_id: int
    frames: np.ndarray
    points: np.ndarray


@dataclass
class TrajectoryWindow:
    """A (T_obs past, T_pred future) slice of one track, world meters."""

    ped_id: int
    past: np.ndarray
    future: np.ndarray
    scene: str = ""


@dataclass
class Scene:
    """A map plus the trajectory windows observed on it."""

    name: str
    occ_map: OccupancyMap
    windows: list


def load_trajectories(path) -> list[PedestrianTrack]:
    """Parse a trajectory text file into per-pedestrian tracks.

    Raises TrajectoryFormatError for malformed rows (with the 1-based line
    number), duplicate (pedestrian, frame) pairs, or an empty file. Numeric
    ids written as floats ("3.0") are truncated to ints.
    """
    rows: dict[int, list[tuple[int, float, float]]] = {}
    n_rows = 0
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 4:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: expected 4 columns (frame ped x y), got {len(parts)}"
                )
            try:
                frame = int(float(parts[0]))
                ped = int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: non-numeric field in {parts!r}"
                ) from None
            rows.setdefault(ped, []).append((frame, x, y))
            n_rows += 1
    if n_rows == 0:
        raise TrajectoryFormatError(f"{path}: no trajectory rows")
    tracks: list[PedestrianTrack] = []
    for ped in sorted(rows):
        obs = sorted(rows[ped], key=lambda r: r[0])
        frames = np.array([o[0] for o in obs], dtype=np.int64)
        if np.unique(frames).size != frames.size:
            dup = frames[np.argmax(np.diff(frames) == 0)]
            raise TrajectoryFormatError(
                f"{path}: duplicate frame {dup} for pedestrian {ped}"
            )
        points = np.array([(o[1], o[2]) for o in obs], dtype=np.float64)
        for fr, pt in _split_at_gaps(frames, points):
            tracks.append(PedestrianTrack(ped_id=ped, frames=fr, points=pt))
    return tracks


def _split_at_gaps(frames: np.ndarray, points: np.ndarray):
    """Split a sorted track wherever frame spacing deviates from the minimum."""
    if frames.size < 2:
        yield frames, points
        return
    diffs = np.diff(frames)
    spacing = diffs.min()
    cuts = np.nonzero(diffs != spacing)[0] + 1
    for fr, pt in zip(np.split(frames, cuts), np.split(points, cuts)):
        yield fr, pt


def make_windows(
    tracks: list[PedestrianTrack],
    t_obs: int = 8,
    t_pred: int = 12,
    stride: int = 1,
    scene: str = "",
) -> list[TrajectoryWindow]:
    """Slide a (t_obs + t_pred) window over every track.

    A track of n points yields floor((n - t_obs - t_pred) / stride) + 1
    windows (zero when too short).
    """
    if t_obs < 2 or t_pred < 1 or stride < 1:
        raise ValueError(f"bad window geometry: t_obs={t_obs} t_pred={t_pred} stride={stride}")
    total = t_obs + t_pred
    out: list[TrajectoryWindow] = []
    for track in tracks:
        n = track.points.shape[0]
        for start in range(0, n - total + 1, stride):
            out.append(
                TrajectoryWindow(
                    ped_id=track.ped_id,
                    past=track.points[start : start + t_obs].copy(),
                    future=track.points[start + t_obs : start + total].copy(),
                    scene=scene,
                )
            )
    return out


def stack_windows(windows: list) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (B, T_obs, 2) past and (B, T_pred, 2) future arrays."""
    past = np.stack([np.asarray(w.past, dtype=np.float64) for w in windows])
    future = np.stack([np.asarray(w.future, dtype=np.float64) for w in windows])
    return past, future


def load_manifest(path) -> list[dict]:
    """Read a scene manifest: JSON {"scenes": [{name, trajectories, map, homography}]}.

    Relative paths are resolved against the manifest's directory. Missing
    referenced files raise FileNotFoundError naming the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    doc = json.loads(path.read_text())
    scenes = doc.get("scenes")
    if not isinstance(scenes, list) or not scenes:
        raise TrajectoryFormatError(f"{path}: manifest needs a non-empty 'scenes' list")
    out = []
    for i, entry in enumerate(scenes):
        missing = {"trajectories", "map", "homography"} - set(entry)
        if missing:
            raise TrajectoryFormatError(
                f"{path}: scene {i} missing keys {sorted(missing)}"
            )
        resolved = {
            "name": entry.get("name", f"scene{i}"),
            "trajectories": path.parent / entry["trajectories"],
            "map": path.parent / entry["map"],
            "homography": path.parent / entry["homography"],
        }
        for key in ("trajectories", "map", "homography"):
            if not resolved[key].exists():
                raise FileNotFoundError(str(resolved[key]))
        out.append(resolved)
    return out


def load_scenes(
    manifest_path, t_obs: int = 8, t_pred: int = 12, stride: int = 1
) -> list[Scene]:
    """Load every manifest scene into (map, windows) pairs."""
    scenes = []
    for entry in load_manifest(manifest_path):
        occ_map = load_map(entry["map"], entry["homography"])
        tracks = load_trajectories(entry["trajectories"])
        windows = make_windows(tracks, t_obs, t_pred, stride, scene=entry["name"])
        scenes.append(Scene(name=entry["name"], occ_map=occ_map, windows=windows))
    return scenes


def write_tsv(path, tracks: list[PedestrianTrack]) -> None:
    """Write tracks as (frame, ped, x, y) rows in the parser's format."""
    lines = []
    for track in tracks:
        for frame, (x, y) in zip(track.frames, track.points):
            lines.append(f"{int(frame)}\t{int(track.ped_id)}\t{x:.6f}\t{y:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
