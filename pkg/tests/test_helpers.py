import numpy as np
import pytest
from numpy.testing import assert_allclose

from polydg.helpers import (
    clip_halfplane,
    derive_seed,
    is_convex,
    points_in_polygon,
    polygon_area,
    polygon_centroid,
    polygon_diameter,
    print_table,
)
from polydg.mesh import L_SHAPE, UNIT_SQUARE


def test_area_sign_follows_orientation():
    assert polygon_area(UNIT_SQUARE) == pytest.approx(1.0)
    assert polygon_area(UNIT_SQUARE[::-1]) == pytest.approx(-1.0)
    assert polygon_area(L_SHAPE) == pytest.approx(0.75)


def test_centroid_and_diameter():
    assert_allclose(polygon_centroid(UNIT_SQUARE), [0.5, 0.5])
    assert_allclose(polygon_centroid(L_SHAPE), [5.0 / 12.0, 5.0 / 12.0])
    assert polygon_diameter(UNIT_SQUARE) == pytest.approx(np.sqrt(2.0))
    assert polygon_diameter(UNIT_SQUARE[:1]) == 0.0


def test_convexity_tolerates_collinear_vertices():
    assert is_convex(UNIT_SQUARE)
    assert not is_convex(L_SHAPE)
    with_midpoint = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert is_convex(with_midpoint)


def test_clip_halfplane():
    left = clip_halfplane(UNIT_SQUARE, np.array([1.0, 0.0]), 0.5)
    assert polygon_area(left) == pytest.approx(0.5)
    assert np.all(left[:, 0] <= 0.5 + 1e-15)
    assert len(clip_halfplane(UNIT_SQUARE, np.array([1.0, 0.0]), -1.0)) == 0
    assert clip_halfplane(UNIT_SQUARE, np.array([1.0, 0.0]), 2.0) is UNIT_SQUARE


def test_points_in_polygon_with_slack():
    pts = np.array([[0.25, 0.25], [0.75, 0.75], [1.0 + 1e-12, 0.25], [-0.1, 0.5]])
    assert points_in_polygon(L_SHAPE, pts).tolist() == [True, False, False, False]
    assert points_in_polygon(L_SHAPE, pts, slack=1e-9).tolist() == [True, False, True, False]


def test_derive_seed_is_deterministic_and_keyed():
    assert derive_seed("example4/coarse/16", 0) == derive_seed(b"example4/coarse/16", 0)
    assert derive_seed("a", 0) != derive_seed("b", 0)
    assert derive_seed("a", 0) != derive_seed("a", 1)
    assert 0 <= derive_seed("a", 3) < 2**32


def test_print_table(capsys):
    print_table([{"p": 1, "K": 23.08123}, {"p": 3, "K": None}], ["p", "K"])
    out = capsys.readouterr().out
    assert "p | K" in out
    assert "23.08" in out
