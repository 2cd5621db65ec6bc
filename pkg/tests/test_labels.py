import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from occface import labels as L


def branch_merge(a, b, skin, feat, literal=False):
    """Single-pixel two-pass merge written as the explicit if/else chain."""
    if a in skin:
        c = a
    elif b in skin:
        c = b
    else:
        c = a
    if a in feat:
        return a
    elif b in feat:
        return b
    return a if literal else c


SKIN = {1}
FEAT = {2, 3, 4, 5, 6, 7, 8}


def test_merge_matches_branch_oracle_on_all_class_pairs():
    pairs = np.array(list(itertools.product(range(L.N_CLASSES), repeat=2)), dtype=np.uint8)
    a = pairs[:, 0].reshape(12, 12)
    b = pairs[:, 1].reshape(12, 12)
    for literal in (False, True):
        got = L.merge_maps(a, b, literal=literal)
        want = np.array([branch_merge(x, y, SKIN, FEAT, literal) for x, y in pairs]).reshape(12, 12)
        np.testing.assert_array_equal(got, want)


def test_merge_single_pixel_examples():
    m = lambda a, b, **kw: int(L.merge_maps(np.array([[a]], np.uint8), np.array([[b]], np.uint8), **kw)[0, 0])
    assert m(11, 4) == 4          # occluded eye recovered from landmarks
    assert m(0, 1) == 1           # skin restored where parsing missed it
    assert m(6, 1) == 6           # parsed feature wins
    assert m(11, 0) == 11
    assert m(11, 1) == 1          # retained from the skin pass
    assert m(11, 1, literal=True) == 11


@given(arrays(np.uint8, (6, 7), elements=st.integers(0, 11)))
def test_merge_with_itself_is_identity(a):
    np.testing.assert_array_equal(L.merge_maps(a, a), a)


@given(arrays(np.uint8, (5, 5), elements=st.integers(0, 11)),
       arrays(np.uint8, (5, 5), elements=st.integers(0, 11)))
def test_merge_is_idempotent_in_b(a, b):
    once = L.merge_maps(a, b)
    np.testing.assert_array_equal(L.merge_maps(once, b), once)


def test_merge_custom_sets():
    sets = L.LabelClassSets(skin={1, 10}, features={4})
    out = L.merge_maps(np.array([[0, 0, 11]], np.uint8), np.array([[10, 6, 4]], np.uint8), sets)
    np.testing.assert_array_equal(out, [[10, 0, 4]])


def test_merge_rejects_mismatch_and_bad_values():
    with pytest.raises(L.LabelError):
        L.merge_maps(np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8))
    with pytest.raises(L.LabelError):
        L.merge_maps(np.full((2, 2), 12, np.uint8), np.zeros((2, 2), np.uint8))
    with pytest.raises(L.LabelError):
        L.merge_maps(np.zeros((2, 2)), np.zeros((2, 2), np.uint8))


def test_class_sets_validation():
    with pytest.raises(L.LabelError):
        L.LabelClassSets(skin={1}, features={1, 2})
    with pytest.raises(L.LabelError):
        L.LabelClassSets(skin={0})
    with pytest.raises(L.LabelError):
        L.LabelClassSets(features={42})
    assert L.LabelClassSets().facial == frozenset(range(1, 9))


def test_attention_weights():
    m = np.array([[0, 1, 4, 9, 10, 11]], np.uint8)
    np.testing.assert_array_equal(L.occlusion_attention(m), [[0.1, 1, 1, 0.1, 0.1, 0.1]])


def test_validate_landmarks():
    with pytest.raises(L.LabelError, match="68"):
        L.validate_landmarks(np.zeros((67, 2)))
    bad = np.zeros((68, 2))
    bad[3, 1] = np.nan
    with pytest.raises(L.LabelError):
        L.validate_landmarks(bad)


# ---------------------------------------------------------------------------
# polygon fill


def test_fill_square_counts_edges_once():
    sq = np.array([[1, 1], [4, 1], [4, 3], [1, 3]], float)
    mask = L.fill_polygon(sq, 6, 5)
    # sample points with 1 <= x <= 4 and 1 <= y <= 3, boundary included
    want = np.zeros((5, 6), bool)
    want[1:4, 1:5] = True
    np.testing.assert_array_equal(mask, want)


def test_fill_collinear_and_degenerate():
    assert not L.fill_polygon(np.array([[0, 0], [2, 2], [4, 4]], float), 5, 5).any()
    assert not L.fill_polygon(np.array([[1, 1], [1, 1], [1, 1]], float), 5, 5).any()


def test_fill_clips_to_canvas():
    big = np.array([[-10, -10], [20, -10], [20, 20], [-10, 20]], float)
    assert L.fill_polygon(big, 4, 3).all()


polys = arrays(np.float64, st.tuples(st.integers(3, 7), st.just(2)),
               elements=st.floats(-2, 12, allow_nan=False).map(lambda v: round(v * 4) / 4))


@given(polys)
def test_fill_agrees_with_point_containment(poly):
    mask = L.fill_polygon(poly, 10, 10)
    rows, cols = np.mgrid[0:10, 0:10]
    pts = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(float)
    np.testing.assert_array_equal(mask.ravel(), L.points_in_polygon(pts, poly))


@given(arrays(np.float64, st.tuples(st.integers(3, 30), st.just(2)), elements=st.floats(-50, 50)))
def test_convex_hull_contains_all_points(pts):
    hull = L.convex_hull(pts)
    if len(hull) < 3 or L.polygon_area(hull) <= 1e-9:
        return
    assert L.polygon_area(hull) > 0          # counter-clockwise
    # every point is on the inner side of every hull edge
    for p0, p1 in zip(hull, np.roll(hull, -1, axis=0)):
        cross = (p1[0] - p0[0]) * (pts[:, 1] - p0[1]) - (p1[1] - p0[1]) * (pts[:, 0] - p0[0])
        assert np.all(cross >= -1e-9)
    # every hull vertex is one of the inputs
    for v in hull:
        assert np.any(np.all(pts == v, axis=1))


def test_convex_hull_square_with_interior_point():
    pts = np.array([[0, 0], [2, 0], [2, 2], [0, 2], [1, 1], [1, 0]], float)
    hull = L.convex_hull(pts)
    assert len(hull) == 4
    assert L.polygon_area(hull) == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# landmark regions


def test_regions_from_template_have_every_feature():
    lmk = L.template_landmarks((64, 64), 48)
    out = L.regions_from_landmarks(lmk, 128, 128)
    present = set(np.unique(out).tolist())
    assert present == {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}
    # brows and eyes are mirror images, so their areas match closely
    assert abs(int((out == 4).sum()) - int((out == 5).sum())) <= 4
    # upper lip sits above the lower lip in image rows
    assert np.nonzero(out == 7)[0].mean() < np.nonzero(out == 8)[0].mean()


def test_regions_skin_is_hull_of_jaw_and_brows():
    lmk = L.template_landmarks((64, 64), 48)
    out = L.regions_from_landmarks(lmk, 128, 128)
    hull = L.convex_hull(lmk[list(L.JAW + L.LEFT_BROW_IDX + L.RIGHT_BROW_IDX)])
    face = L.fill_polygon(hull, 128, 128)
    np.testing.assert_array_equal(out > 0, face | (out > 1))


def test_regions_tiny_canvas_and_offscreen():
    lmk = L.template_landmarks((500, 500), 10)
    assert not L.regions_from_landmarks(lmk, 16, 16).any()
    with pytest.raises(L.LabelError):
        L.regions_from_landmarks(lmk, 0, 16)


# ---------------------------------------------------------------------------
# independent oracles


def ray_cast_inside(x, y, poly):
    """Even-odd ray casting toward +x; points on an edge count as inside."""
    inside = False
    n = len(poly)
    for i in range(n):
        (x0, y0), (x1, y1) = poly[i], poly[(i + 1) % n]
        cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        if abs(cross) < 1e-9 and min(x0, x1) - 1e-9 <= x <= max(x0, x1) + 1e-9 \
                and min(y0, y1) - 1e-9 <= y <= max(y0, y1) + 1e-9:
            return True
        if (y0 > y) != (y1 > y):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if xc > x:
                inside = not inside
    return inside


def test_template_regions_match_ray_casting_oracle():
    lmk = L.template_landmarks((32.0, 32.0), 24.0)
    got = L.regions_from_landmarks(lmk, 64, 64)
    # paint order mirrors the documented layering; lips split by the corner line
    want = np.zeros((64, 64), np.uint8)
    hull = L.convex_hull(lmk[list(L.JAW + L.LEFT_BROW_IDX + L.RIGHT_BROW_IDX)])
    layers = [(hull, L.SKIN)] + [(lmk[list(idx)], cls) for idx, cls in (
        (L.LEFT_BROW_IDX, L.LEFT_BROW), (L.RIGHT_BROW_IDX, L.RIGHT_BROW), (L.LEFT_EYE_IDX, L.LEFT_EYE),
        (L.RIGHT_EYE_IDX, L.RIGHT_EYE), (L.NOSE_IDX, L.NOSE))]
    (ax, ay), (bx, by) = lmk[48], lmk[54]
    for r in range(64):
        for c in range(64):
            for poly, cls in layers:
                if ray_cast_inside(c, r, poly):
                    want[r, c] = cls
            if ray_cast_inside(c, r, lmk[list(L.OUTER_LIPS_IDX)]):
                side = (bx - ax) * (r - ay) - (by - ay) * (c - ax)
                want[r, c] = L.UPPER_LIP if side <= 0 else L.LOWER_LIP
            if ray_cast_inside(c, r, lmk[list(L.INNER_LIPS_IDX)]):
                want[r, c] = L.MOUTH_INTERIOR
    for cls in range(L.N_CLASSES):
        assert int((got == cls).sum()) == int((want == cls).sum()), L.LABEL_NAMES[cls]
    np.testing.assert_array_equal(got, want)


def test_merge_three_by_three_example():
    O, S, B, N, E = L.OCCLUDER, L.SKIN, L.BACKGROUND, L.NOSE, L.LEFT_EYE
    a = np.array([[O, S, B], [O, N, B], [B, B, B]], np.uint8)
    b = np.array([[S, S, B], [E, N, B], [S, B, B]], np.uint8)
    want = np.array([[S, S, B], [E, N, B], [S, B, B]], np.uint8)
    np.testing.assert_array_equal(L.merge_maps(a, b), want)
    oracle = [[branch_merge(x, y, SKIN, FEAT) for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]
    np.testing.assert_array_equal(oracle, want)
    # occluder over skin becomes skin, double background stays background
    assert L.merge_maps(np.array([[O, B]], np.uint8), np.array([[S, B]], np.uint8)).tolist() == [[S, B]]


def test_attention_weight_sum_count_oracle():
    m = np.zeros((10, 10), np.uint8)
    m.ravel()[:40] = L.SKIN
    w = L.occlusion_attention(m)
    assert w.sum() == pytest.approx(46.0)
    assert set(np.unique(w).tolist()) == {0.1, 1.0}
    assert np.all(L.occlusion_attention(np.zeros((4, 4), np.uint8)) == 0.1)
