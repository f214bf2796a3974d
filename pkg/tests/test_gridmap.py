"""Occupancy map geometry against hand-computed oracles."""

import numpy as np
import pytest

from colav.gridmap import (
    MapFormatError,
    OccupancyMap,
    load_homography,
    load_map,
    load_pgm,
    save_homography,
    save_pgm,
)

# 4x6 map, obstacle at (row 1, col 2) and right column; 0.5 m cells.
#   col:  0 1 2 3 4 5
CELLS = np.array(
    [
        [1, 1, 1, 1, 1, 0],
        [1, 1, 0, 1, 1, 0],
        [1, 1, 1, 1, 1, 0],
        [1, 1, 1, 1, 1, 0],
    ],
    dtype=np.uint8,
)
H = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]])  # world->pixel


@pytest.fixture
def occ():
    return OccupancyMap(CELLS, H)


def test_world_pixel_round_trip(occ):
    pts = np.array([[0.3, 0.4], [2.9, 1.9], [0.0, 0.0]])
    pix = occ.world_to_pixel(pts)
    assert np.allclose(pix, pts * 2.0)
    back = occ.pixel_to_world(pix)
    assert np.allclose(back, pts, atol=1e-12)


def test_floor_cell_convention(occ):
    # world (1.1, 0.6) -> pixel (2.2, 1.2) -> col 2, row 1 which is obstacle
    assert occ.is_obstacle(np.array([1.1, 0.6]))
    # nudge into col 1 -> walkable
    assert not occ.is_obstacle(np.array([0.9, 0.6]))
    # exact integer pixel coordinate belongs to the cell it indexes
    assert occ.is_obstacle(np.array([1.0, 0.5]))  # pixel (2.0, 1.0) -> cell (1, 2)
    assert not occ.is_obstacle(np.array([1.0, 1.0]))  # pixel (2, 2) -> cell (2, 2)


def test_out_of_bounds_is_obstacle(occ):
    for p in ([-0.1, 0.5], [0.5, -0.1], [3.1, 0.5], [0.5, 2.1], [50.0, 50.0]):
        assert occ.is_obstacle(np.array(p))


def test_is_obstacle_vectorized_shapes(occ):
    pts = np.zeros((3, 4, 2)) + 0.25  # all in walkable cell (0, 0)
    out = occ.is_obstacle(pts)
    assert out.shape == (3, 4)
    assert not out.any()


def test_contours_oracle(occ):
    got = occ.extract_contours()
    # obstacle cells adjacent (4-neighborhood) to walkable: the lone block
    # (1,2) and every right-column cell (its col 4 neighbors are walkable).
    cells = {(1, 2), (0, 5), (1, 5), (2, 5), (3, 5)}
    # centers: world = pixel/2 with pixel = (col+.5, row+.5)
    expect = np.array([[(c + 0.5) / 2.0, (r + 0.5) / 2.0] for r, c in sorted(cells)])
    assert got.shape == expect.shape
    assert np.allclose(np.sort(got, axis=0), np.sort(expect, axis=0))


def test_contours_row_major_order_and_cache(occ):
    a = occ.extract_contours()
    b = occ.extract_contours()
    assert a is b  # cached
    rows = np.floor(occ.world_to_pixel(a)[:, 1]).astype(int)
    cols = np.floor(occ.world_to_pixel(a)[:, 0]).astype(int)
    order = np.lexsort((cols, rows))
    assert np.array_equal(order, np.arange(len(a)))


def test_fully_walkable_map_has_no_contours():
    m = OccupancyMap(np.ones((4, 4), np.uint8), np.eye(3))
    assert m.extract_contours().shape == (0, 2)


def test_patch_orientation_heading_east():
    # obstacle strip on the top rows (north in world = larger y? No: row 0 is
    # the smallest pixel y; with identity-scaled H, larger world y = larger row)
    cells = np.ones((40, 40), np.uint8)
    cells[:, 30:] = 0  # obstacle at world x >= 7.5 (0.25 m cells)
    m = OccupancyMap(cells, np.diag([4.0, 4.0, 1.0]))
    patch = m.extract_patch(np.array([5.0, 5.0]), 0.0, size=16, cell_size=0.25, forward_offset=2.0)
    # effective center = (7, 5); forward (+x) spans rows; obstacle ahead at
    # x >= 7.5, i.e. the far-forward rows of the grid must be 0.
    assert patch.grid.shape == (16, 16)
    assert np.allclose(patch.center, [7.0, 5.0])
    assert (patch.grid[:2, :] == 0.0).all()  # far forward = obstacle
    assert (patch.grid[-2:, :] == 1.0).all()  # behind center = walkable


def test_patch_orientation_heading_north():
    cells = np.ones((40, 40), np.uint8)
    cells[:, 30:] = 0
    m = OccupancyMap(cells, np.diag([4.0, 4.0, 1.0]))
    # heading +y: forward offset moves up in y, obstacle (x >= 7.5) is to the
    # right of travel -> right half of the patch columns.
    patch = m.extract_patch(np.array([6.9, 5.0]), np.pi / 2, size=16, cell_size=0.25, forward_offset=2.0)
    assert (patch.grid[:, -2:] == 0.0).all()
    assert (patch.grid[:, :2] == 1.0).all()


def test_patch_rotation_equivariance():
    # rotating the scene and the query together leaves the patch unchanged
    rng = np.random.default_rng(2)
    cells = np.ones((60, 60), np.uint8)
    cells[20:28, 34:42] = 0
    m = OccupancyMap(cells, np.diag([4.0, 4.0, 1.0]))
    center = np.array([7.0, 7.0])
    base = m.extract_patch(center, 0.3, size=24, cell_size=0.2, forward_offset=1.5)
    rot = m.extract_patch(center, 0.3 + 2 * np.pi, size=24, cell_size=0.2, forward_offset=1.5)
    assert np.array_equal(base.grid, rot.grid)


def test_patch_out_of_bounds_reads_obstacle():
    m = OccupancyMap(np.ones((8, 8), np.uint8), np.eye(3))
    patch = m.extract_patch(np.array([0.0, 0.0]), np.pi, size=8, cell_size=1.0, forward_offset=2.0)
    assert (patch.grid == 0.0).any() and (patch.grid == 1.0).any()


def test_patch_stack_matches_single(occ):
    centers = np.array([[0.5, 0.5], [1.5, 1.0]])
    headings = np.array([0.0, 1.2])
    stack = occ.patch_stack(centers, headings, size=8, cell_size=0.3, forward_offset=1.0)
    assert stack.shape == (2, 8, 8)
    for i in range(2):
        single = occ.extract_patch(centers[i], headings[i], size=8, cell_size=0.3, forward_offset=1.0)
        assert np.array_equal(stack[i], single.grid)


def test_pgm_round_trip(tmp_path):
    path = tmp_path / "m.pgm"
    img = (CELLS * 255).astype(np.uint8)
    save_pgm(path, img)
    back = load_pgm(path)
    assert np.array_equal(back, img)


def test_pgm_p2_parse(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_text("P2\n# comment\n3 2\n255\n0 255 0\n255 0 255\n")
    img = load_pgm(path)
    assert img.shape == (2, 3)
    assert img[0, 1] == 255 and img[1, 0] == 255


def test_pgm_rejects_bad_magic(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P7\n2 2\n255\n" + bytes(4))
    with pytest.raises(MapFormatError):
        load_pgm(path)


def test_pgm_rejects_truncated(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(MapFormatError):
        load_pgm(path)


def test_load_map_threshold(tmp_path):
    img = np.array([[0, 127, 128, 255], [255, 255, 255, 255]], dtype=np.uint8)
    save_pgm(tmp_path / "m.pgm", img)
    save_homography(tmp_path / "h.txt", np.eye(3))
    m = load_map(tmp_path / "m.pgm", tmp_path / "h.txt")
    assert np.array_equal(m.cells, [[0, 0, 1, 1], [1, 1, 1, 1]])


def test_homography_round_trip_exact(tmp_path):
    h = np.array([[0.1234567890123, 0.0, -3.5], [0.0, -0.987654321, 7.25], [0.0, 0.0, 1.0]])
    save_homography(tmp_path / "h.txt", h)
    back = load_homography(tmp_path / "h.txt")
    assert np.array_equal(back, h)  # repr round-trips floats exactly


def test_singular_homography_rejected():
    with pytest.raises(ValueError):
        OccupancyMap(CELLS, np.zeros((3, 3)))


def test_bad_cells_rejected():
    with pytest.raises(ValueError):
        OccupancyMap(np.array([[0, 2], [1, 1]], np.uint8), np.eye(3))
    with pytest.raises(ValueError):
        OccupancyMap(np.ones((1, 5), np.uint8), np.eye(3))


def test_projective_homography():
    # a genuinely projective H (nonzero bottom row) still round-trips
    h = np.array([[2.0, 0.1, 1.0], [0.05, 1.8, -0.5], [0.001, 0.002, 1.0]])
    m = OccupancyMap(np.ones((10, 10), np.uint8), h)
    pts = np.array([[1.0, 2.0], [3.0, 0.5]])
    assert np.allclose(m.pixel_to_world(m.world_to_pixel(pts)), pts, atol=1e-9)
