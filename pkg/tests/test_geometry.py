"""Tests for windows, dilation, uniform sampling and quadrature grids."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nspp.errors import ConfigurationError
from nspp.geometry import (DilatedWindow, Window, contains, default_cell, dilate, make_grid, sample_uniform,
                           window_area)

UNIT = Window.unit_square()
TWO_SQUARES = Window([[0, 1, 0, 1], [2, 3, 0, 1]])
L_SHAPE = Window([[0, 2, 0, 1], [0, 1, 0, 2]])


def raster_area(w: Window, cell: float) -> float:
    """Independent oracle: count cell centres inside any rectangle."""
    x0, x1, y0, y1 = w.bbox
    xs = np.arange(x0 + cell / 2, x1, cell)
    ys = np.arange(y0 + cell / 2, y1, cell)
    gx, gy = np.meshgrid(xs, ys)
    hit = np.zeros(gx.shape, dtype=bool)
    for xl, xr, yb, yt in w.rects:
        hit |= (gx >= xl) & (gx <= xr) & (gy >= yb) & (gy <= yt)
    return hit.sum() * cell * cell


class TestWindow:
    def test_unit_square_area(self):
        assert window_area(UNIT) == 1.0

    def test_disjoint_squares_area(self):
        assert window_area(TWO_SQUARES) == 2.0

    def test_overlapping_union_area(self):
        w = Window([[0, 2, 0, 1], [1, 3, 0, 1]])
        assert window_area(w) == pytest.approx(3.0, abs=1e-12)
        assert raster_area(w, 1e-3) == pytest.approx(window_area(w), abs=1e-3)

    def test_pieces_are_disjoint_and_cover(self):
        w = Window([[0, 2, 0, 1], [1, 3, 0.5, 2], [0.5, 1.5, -1, 0.2]])
        p = w.pieces
        rng = np.random.default_rng(0)
        pts = rng.uniform([-1, -1.5], [3.5, 2.5], size=(20000, 2))
        in_pieces = ((pts[:, 0:1] > p[:, 0]) & (pts[:, 0:1] < p[:, 1])
                     & (pts[:, 1:2] > p[:, 2]) & (pts[:, 1:2] < p[:, 3])).sum(axis=1)
        assert in_pieces.max() <= 1
        np.testing.assert_array_equal(in_pieces == 1, w.contains(pts))

    @pytest.mark.parametrize("p, expected", [((0.5, 0.5), True), ((1.5, 0.5), False), ((1.0, 1.0), True),
                                             ((0.0, 0.3), True), ((-1e-12, 0.3), False)])
    def test_contains(self, p, expected):
        assert contains(UNIT, p) is expected

    def test_contains_vectorised(self):
        out = UNIT.contains(np.array([[0.5, 0.5], [2, 2]]))
        np.testing.assert_array_equal(out, [True, False])

    def test_degenerate_rectangle_rejected(self):
        with pytest.raises(ConfigurationError, match="degenerate"):
            Window([[0, 0, 0, 1]])

    def test_empty_rectangle_list_rejected(self):
        with pytest.raises(ConfigurationError):
            Window(np.empty((0, 4)))

    def test_from_edges_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            Window.from_edges([0, 1], [1], [0], [1])

    def test_distance(self):
        np.testing.assert_allclose(UNIT.distance([[-0.3, 0.5], [0.5, 0.5], [2, 2]]),
                                   [0.3, 0.0, math.sqrt(2)])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 5), st.floats(0.05, 3), st.floats(0, 5), st.floats(0.05, 3)),
                    min_size=1, max_size=4))
    def test_union_area_bounds(self, boxes):
        rects = [(x, x + w, y, y + h) for x, w, y, h in boxes]
        win = Window(rects)
        single = [(r[1] - r[0]) * (r[3] - r[2]) for r in rects]
        assert win.area >= max(single) - 1e-9
        assert win.area <= sum(single) + 1e-9


class TestDilate:
    def test_radius_zero_is_window(self):
        d = dilate(UNIT, 0.0, 1e-3)
        assert d.area == pytest.approx(1.0, abs=2e-3)

    def test_radius_zero_two_squares(self):
        d = dilate(TWO_SQUARES, 0.0, 1e-3)
        assert d.area == pytest.approx(2.0, abs=4e-3)

    def test_dilated_area_formula(self):
        d = dilate(UNIT, 0.5, 2.5e-3)
        exact = 1 + 4 * 0.5 + math.pi * 0.25
        assert d.area == pytest.approx(exact, rel=0.01)

    def test_point_in_dilation(self):
        d = dilate(UNIT, 0.5)
        assert d.contains((-0.3, 0.5))
        assert not d.contains((-0.6, 0.5))

    def test_base_inside_mask(self):
        d = dilate(L_SHAPE, 0.1)
        rng = np.random.default_rng(1)
        pts = sample_uniform(L_SHAPE, 5000, rng)
        row, col, inside = d._cell_index(pts)
        assert inside.all() and d.mask[row, col].all()

    def test_mask_cells_near_base(self):
        d = dilate(L_SHAPE, 0.2)
        c = d.cell_centers()
        assert np.all(L_SHAPE.distance(c) <= 0.2 + d.cell * math.sqrt(2))

    def test_monotone_in_radius(self):
        small = dilate(UNIT, 0.1, 0.01)
        big = dilate(UNIT, 0.3, 0.01)
        c = small.cell_centers()
        assert big.contains(c).all()

    def test_coarse_cell_rejected(self):
        with pytest.raises(ConfigurationError, match="too coarse"):
            dilate(UNIT, 0.1, 0.06)

    def test_negative_radius_rejected(self):
        with pytest.raises(ConfigurationError):
            dilate(UNIT, -0.1)

    def test_default_cell(self):
        assert default_cell(UNIT) == pytest.approx(0.005)
        assert default_cell(UNIT, 0.004) == pytest.approx(0.002)


class TestSampleUniform:
    def test_zero(self):
        assert sample_uniform(UNIT, 0, np.random.default_rng(0)).shape == (0, 2)

    def test_mean(self):
        pts = sample_uniform(UNIT, 100_000, np.random.default_rng(2))
        np.testing.assert_allclose(pts.mean(axis=0), [0.5, 0.5], atol=0.01)

    @pytest.mark.parametrize("region", [UNIT, L_SHAPE, TWO_SQUARES, dilate(L_SHAPE, 0.2)])
    def test_points_inside(self, region):
        pts = sample_uniform(region, 100_000, np.random.default_rng(3))
        assert region.contains(pts).all()

    def test_union_weights_by_area(self):
        # overlap must not be double counted: the right half of [0,2]x[0,1] U [1,3]x[0,1] has 2/3 of the mass
        w = Window([[0, 2, 0, 1], [1, 3, 0, 1]])
        pts = sample_uniform(w, 60_000, np.random.default_rng(4))
        assert np.mean(pts[:, 0] > 1) == pytest.approx(2 / 3, abs=0.01)

    def test_dilated_uniform(self):
        d = dilate(UNIT, 0.5)
        pts = sample_uniform(d, 100_000, np.random.default_rng(5))
        # fraction inside the base window equals |W| / |W_dil|
        assert np.mean(UNIT.contains(pts)) == pytest.approx(1 / d.area, abs=0.01)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            sample_uniform(UNIT, -1, np.random.default_rng(0))


class TestGrid:
    def test_four_nodes(self):
        g = make_grid(UNIT, 0.5)
        assert len(g) == 4
        np.testing.assert_array_equal(g.weights, 0.25)

    def test_weight_total(self):
        assert make_grid(UNIT, 0.01).total == pytest.approx(1.0, abs=1e-2)

    def test_l_shape_count(self):
        cell = 0.05
        g = make_grid(L_SHAPE, cell)
        assert len(g) == round(raster_area(L_SHAPE, cell) / cell**2)

    def test_convergence(self):
        w = Window([[0, 1.03, 0, 0.97]])
        errs = [abs(make_grid(w, c).total - w.area) for c in (0.02, 0.01, 0.005)]
        assert errs[2] < errs[0]

    def test_dilated_domain(self):
        d = dilate(UNIT, 0.1)
        g = make_grid(d, d.cell)
        assert g.domain == "W_dil"
        assert g.total == pytest.approx(d.area, rel=1e-9)

    def test_bad_cell(self):
        with pytest.raises(ConfigurationError):
            make_grid(UNIT, 0.0)

    def test_isinstance(self):
        assert isinstance(dilate(UNIT, 0.1), DilatedWindow)
