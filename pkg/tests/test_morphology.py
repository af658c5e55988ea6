"""Structuring-element morphology and flood fill, checked against direct
set-arithmetic oracles on small grids."""

import numpy as np

from sketchfield.morphology import (
    boundary_pixels,
    connected_components_4,
    dilate,
    disk_offsets,
    erode,
    flood_fill,
    has_holes,
)


def _dilate_oracle(grid, offsets):
    h, w = grid.shape
    out = np.zeros_like(grid)
    for y, x in zip(*np.nonzero(grid)):
        for dx, dy in offsets:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                out[yy, xx] = True
    return out


def _erode_oracle(grid, offsets, border):
    h, w = grid.shape
    out = np.zeros_like(grid)
    for y in range(h):
        for x in range(w):
            keep = True
            for dx, dy in offsets:
                yy, xx = y + dy, x + dx
                inside = 0 <= yy < h and 0 <= xx < w
                val = grid[yy, xx] if inside else border
                if not val:
                    keep = False
                    break
            out[y, x] = keep
    return out


def test_disk_offsets_sizes():
    assert set(disk_offsets(1.0)) == {(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)}
    assert len(disk_offsets(1.5)) == 9  # full 3x3 block
    assert len(disk_offsets(2.0)) == 13
    assert disk_offsets(0.5) == [(0, 0)]


def test_dilate_matches_oracle():
    rng = np.random.default_rng(11)
    for radius in (1.0, 1.5, 2.0):
        offs = disk_offsets(radius)
        for _ in range(20):
            g = rng.random((9, 11)) < 0.2
            assert np.array_equal(dilate(g, radius), _dilate_oracle(g, offs))


def test_erode_matches_oracle_both_border_modes():
    rng = np.random.default_rng(13)
    for radius in (1.0, 2.0):
        offs = disk_offsets(radius)
        for border in (True, False):
            for _ in range(20):
                g = rng.random((8, 8)) < 0.7
                got = erode(g, radius, border_value=border)
                assert np.array_equal(got, _erode_oracle(g, offs, border))


def test_erode_dilate_duality():
    rng = np.random.default_rng(17)
    for _ in range(20):
        g = rng.random((10, 10)) < 0.5
        # erosion of the complement is the complement of dilation
        lhs = erode(~g, 2.0, border_value=True)
        rhs = ~dilate(g, 2.0)
        assert np.array_equal(lhs, rhs)


def test_flood_fill_respects_barriers():
    blocked = np.zeros((5, 5), dtype=bool)
    blocked[:, 2] = True  # vertical wall
    filled = flood_fill(blocked, [(0, 0)])
    assert filled[:, :2].all()
    assert not filled[:, 2:].any()


def test_flood_fill_diagonal_is_not_connected():
    blocked = np.ones((3, 3), dtype=bool)
    blocked[0, 0] = False
    blocked[1, 1] = False
    filled = flood_fill(blocked, [(0, 0)])
    assert filled[0, 0] and not filled[1, 1]


def test_connected_components():
    g = np.zeros((4, 6), dtype=bool)
    g[0, 0:2] = True
    g[3, 4:6] = True
    comps = connected_components_4(g)
    assert len(comps) == 2
    assert sorted(c.sum() for c in comps) == [2, 2]


def test_has_holes():
    ring = np.zeros((5, 5), dtype=bool)
    ring[1:4, 1:4] = True
    ring[2, 2] = False
    assert has_holes(ring)
    solid = np.zeros((5, 5), dtype=bool)
    solid[1:4, 1:4] = True
    assert not has_holes(solid)


def test_boundary_pixels():
    solid = np.zeros((6, 6), dtype=bool)
    solid[1:5, 1:5] = True
    edge = boundary_pixels(solid)
    inner = np.zeros((6, 6), dtype=bool)
    inner[2:4, 2:4] = True
    assert np.array_equal(edge, solid & ~inner)
