"""Trajectory file parsing, gap handling, and window slicing."""

import numpy as np
import pytest

from colav.data import (
    TrajectoryFormatError,
    load_manifest,
    load_trajectories,
    make_windows,
    stack_windows,
    write_tsv,
)


def write(tmp_path, text, name="t.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_simple(tmp_path):
    p = write(tmp_path, "0\t1\t1.0\t2.0\n10\t1\t1.5\t2.5\n0\t2\t5.0\t5.0\n")
    tracks = load_trajectories(p)
    assert [t.ped_id for t in tracks] == [1, 2]
    assert np.array_equal(tracks[0].frames, [0, 10])
    assert np.allclose(tracks[0].points, [[1.0, 2.0], [1.5, 2.5]])


def test_load_sorts_frames(tmp_path):
    p = write(tmp_path, "20\t1\t3.0\t0.0\n0\t1\t1.0\t0.0\n10\t1\t2.0\t0.0\n")
    tracks = load_trajectories(p)
    assert np.array_equal(tracks[0].frames, [0, 10, 20])
    assert np.allclose(tracks[0].points[:, 0], [1.0, 2.0, 3.0])


def test_load_float_ids_and_scientific(tmp_path):
    p = write(tmp_path, "0.0\t3.0\t1e0\t-2.5e-1\n")
    tracks = load_trajectories(p)
    assert tracks[0].ped_id == 3
    assert np.allclose(tracks[0].points, [[1.0, -0.25]])


def test_load_rejects_bad_rows(tmp_path):
    with pytest.raises(TrajectoryFormatError, match=":2:"):
        load_trajectories(write(tmp_path, "0\t1\t1.0\t2.0\n0\t1\tbroken\tx\n"))
    with pytest.raises(TrajectoryFormatError, match=":1:"):
        load_trajectories(write(tmp_path, "0\t1\t1.0\n"))


def test_load_rejects_duplicate_frames(tmp_path):
    with pytest.raises(TrajectoryFormatError):
        load_trajectories(write(tmp_path, "0\t1\t1.0\t2.0\n0\t1\t3.0\t4.0\n"))


def test_load_rejects_empty(tmp_path):
    with pytest.raises(TrajectoryFormatError):
        load_trajectories(write(tmp_path, ""))


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    from colav.data import PedestrianTrack

    tracks = [
        PedestrianTrack(1, np.arange(5) * 10, rng.normal(size=(5, 2)).round(6)),
        PedestrianTrack(2, np.arange(3) * 10, rng.normal(size=(3, 2)).round(6)),
    ]
    p = tmp_path / "out.tsv"
    write_tsv(p, tracks)
    back = load_trajectories(p)
    assert len(back) == 2
    for a, b in zip(tracks, back):
        assert a.ped_id == b.ped_id
        assert np.array_equal(a.frames, b.frames)
        assert np.allclose(a.points, b.points, atol=1e-6)


def test_make_windows_count_formula(tmp_path):
    from colav.data import PedestrianTrack

    n = 25
    track = PedestrianTrack(1, np.arange(n) * 10, np.zeros((n, 2)))
    for t_obs, t_pred, stride in [(8, 12, 1), (8, 12, 4), (2, 1, 1), (8, 12, 50)]:
        wins = make_windows([track], t_obs, t_pred, stride)
        expect = max(0, (n - t_obs - t_pred) // stride + 1)
        assert len(wins) == expect, (t_obs, t_pred, stride)
        for w in wins:
            assert w.past.shape == (t_obs, 2)
            assert w.future.shape == (t_pred, 2)


def test_gap_splitting_keeps_windows_contiguous(tmp_path):
    # one pedestrian recorded in two sessions 290 frames apart
    lines = []
    for i in range(12):
        lines.append(f"{i * 10}\t1\t{float(i)}\t0.0")
    for i in range(12):
        lines.append(f"{400 + i * 10}\t1\t{100.0 + i}\t0.0")
    p = write(tmp_path, "\n".join(lines) + "\n")
    tracks = load_trajectories(p)
    assert len(tracks) == 2  # split at the gap
    wins = make_windows(tracks, 4, 4, 1)
    # each contiguous run of 12 gives 12-8+1 = 5 windows; none cross the gap
    assert len(wins) == 10
    for w in wins:
        seq = np.concatenate([w.past[:, 0], w.future[:, 0]])
        assert np.allclose(np.diff(seq), 1.0)  # consecutive points only


def test_make_windows_short_track_skipped():
    from colav.data import PedestrianTrack

    track = PedestrianTrack(1, np.arange(5) * 10, np.zeros((5, 2)))
    assert make_windows([track], 8, 12, 1) == []


def test_make_windows_validation():
    with pytest.raises(ValueError):
        make_windows([], 1, 1, 1)  # t_obs < 2
    with pytest.raises(ValueError):
        make_windows([], 2, 0, 1)
    with pytest.raises(ValueError):
        make_windows([], 2, 1, 0)


def test_windows_are_copies():
    from colav.data import PedestrianTrack

    track = PedestrianTrack(1, np.arange(20) * 10, np.zeros((20, 2)))
    wins = make_windows([track], 8, 12, 1)
    wins[0].past[:] = 99.0
    assert track.points.max() == 0.0


def test_stack_windows():
    from colav.data import PedestrianTrack

    track = PedestrianTrack(1, np.arange(22) * 10, np.random.default_rng(0).normal(size=(22, 2)))
    wins = make_windows([track], 8, 12, 1)
    past, future = stack_windows(wins)
    assert past.shape == (len(wins), 8, 2)
    assert future.shape == (len(wins), 12, 2)
    assert np.array_equal(past[0], wins[0].past)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.json")


def test_manifest_relative_resolution(tmp_path):
    import json

    (tmp_path / "maps").mkdir()
    (tmp_path / "maps" / "a.pgm").write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    (tmp_path / "maps" / "a.txt").write_text("1 0 0\n0 1 0\n0 0 1\n")
    (tmp_path / "a.tsv").write_text("0\t1\t0.0\t0.0\n")
    man = {
        "scenes": [
            {"name": "a", "map": "maps/a.pgm", "homography": "maps/a.txt", "trajectories": "a.tsv"}
        ]
    }
    p = tmp_path / "man.json"
    p.write_text(json.dumps(man))
    entries = load_manifest(p)
    assert entries[0]["map"] == tmp_path / "maps" / "a.pgm"
    assert entries[0]["trajectories"] == tmp_path / "a.tsv"


def test_manifest_names_missing_referenced_file(tmp_path):
    import json

    man = {"scenes": [{"name": "a", "map": "a.pgm", "homography": "a.txt", "trajectories": "a.tsv"}]}
    p = tmp_path / "man.json"
    p.write_text(json.dumps(man))
    with pytest.raises(FileNotFoundError, match=r"a\.(tsv|pgm|txt)"):
        load_manifest(p)


def test_manifest_rejects_bad_schema(tmp_path):
    p = tmp_path / "man.json"
    p.write_text('{"scenes": "oops"}')
    with pytest.raises(ValueError):
        load_manifest(p)
    p.write_text('{"scenes": [{"name": "a"}]}')
    with pytest.raises(ValueError):
        load_manifest(p)
