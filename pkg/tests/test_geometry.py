import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lfkit.core import AngularGrid
from lfkit.geometry import (
    ConfidenceMaps,
    DisparityMap,
    backward_warp,
    bilinear_sample,
    blend_confidence,
    build_psv,
)
from lfkit.scene import Layer, SceneSpec, make_synthetic_scene


def test_bilinear_examples(rng):
    img = rng.uniform(size=(5, 6))
    assert bilinear_sample(img, 3, 2) == img[2, 3]
    assert bilinear_sample(img, 2.5, 1) == pytest.approx((img[1, 2] + img[1, 3]) / 2, abs=1e-15)
    assert bilinear_sample(np.full((4, 4), 0.7), -3.7, 1.2) == pytest.approx(0.7, abs=1e-15)
    # clamping happens before interpolation
    assert bilinear_sample(img, -3.7, 0) == img[0, 0]
    assert bilinear_sample(img, 10.0, 10.0) == img[4, 5]
    with pytest.raises(ValueError):
        bilinear_sample(img, np.nan, 0)
    with pytest.raises(ValueError):
        bilinear_sample(np.zeros((0, 3)), 0, 0)


def test_bilinear_matches_direct_formula(rng):
    img = rng.uniform(size=(7, 9))
    xs = rng.uniform(0, 8, size=50)
    ys = rng.uniform(0, 6, size=50)
    got = bilinear_sample(img, xs, ys)
    for x, y, g in zip(xs, ys, got):
        x0, y0 = int(x), int(y)
        fx, fy = x - x0, y - y0
        x1, y1 = min(x0 + 1, 8), min(y0 + 1, 6)
        ref = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
               + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
        assert g == pytest.approx(ref, abs=1e-14)


def test_warp_degenerate_cases(rng):
    src = rng.uniform(size=(6, 7))
    np.testing.assert_array_equal(backward_warp(src, (1, 1), (3, 2), np.zeros((6, 7))), src)
    np.testing.assert_array_equal(backward_warp(src, (2, 2), (2, 2), rng.normal(size=(6, 7))), src)
    with pytest.raises(ValueError):
        backward_warp(src, (1, 1), (1, 2), np.zeros((5, 7)))


def test_warp_unit_shift_on_ramp():
    w = 8
    src = np.tile(np.arange(w) / w, (8, 1))
    out = backward_warp(src, (2, 2), (2, 3), DisparityMap((2, 3), np.ones((8, 8))))
    np.testing.assert_allclose(out[:, : w - 1], np.tile((np.arange(w - 1) + 1) / w, (8, 1)), atol=1e-15)
    # last column clamps to the border
    np.testing.assert_allclose(out[:, -1], np.full(8, (w - 1) / w))


def test_warp_offsets_act_on_rows_and_columns(rng):
    src = rng.uniform(size=(10, 10))
    d = np.full((10, 10), 2.0)
    down = backward_warp(src, (1, 1), (2, 1), d)
    np.testing.assert_array_equal(down[:8], src[2:])
    left = backward_warp(src, (1, 3), (1, 1), d)
    np.testing.assert_array_equal(left[:, 4:], src[:, :6])


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0, 1), disp=arrays(np.float64, (5, 6), elements=st.floats(-4, 4)),
       du=st.integers(-3, 3), dv=st.integers(-3, 3))
def test_warping_constant_is_constant(c, disp, du, dv):
    out = backward_warp(np.full((5, 6), c), (4, 4), (4 + du, 4 + dv), disp)
    np.testing.assert_allclose(out, c, atol=1e-15)


@pytest.mark.parametrize("d", [-2, -1, 1, 3])
def test_integer_disparity_is_integer_shift(rng, d):
    src = rng.uniform(size=(12, 12))
    out = backward_warp(src, (3, 3), (3, 4), np.full((12, 12), float(d)))
    lo, hi = max(0, -d), min(12, 12 - d)
    np.testing.assert_array_equal(out[:, lo:hi], src[:, lo + d:hi + d])


def test_lambertian_consistency():
    spec = SceneSpec([Layer(1.3)], AngularGrid(5, 5), 48, 48, (-2.0, 2.0))
    scene = make_synthetic_scene(spec, 11)
    lf = scene.lightfield
    worst = 0.0
    for q in lf.grid:
        for p in lf.grid:
            out = backward_warp(lf.view(p)[..., 0], p, q, scene.disparity_map(q))
            keep = ~scene.occlusion_mask(q, p)
            worst = max(worst, float(np.abs(out - lf.view(q)[..., 0])[keep].max()))
    assert worst <= 2e-2


def test_psv_plane_at_true_disparity_matches_target():
    spec = SceneSpec([Layer(1.0)], AngularGrid(3, 3), 32, 32, (-2.0, 2.0))
    scene = make_synthetic_scene(spec, 2)
    lf = scene.lightfield
    p, q = (2, 2), (2, 3)
    psv = build_psv(lf.views([p])[..., 0], [p], q, [-1.0, 0.0, 1.0, 2.0])
    assert psv.slabs.shape == (1, 4, 32, 32)
    keep = ~scene.occlusion_mask(q, p)
    err = np.abs(psv.slabs[0, 2] - lf.view(q)[..., 0])[keep]
    assert err.max() <= 1e-3


def test_psv_constant_and_zero_plane(rng):
    const = np.full((2, 5, 5), 0.25)
    psv = build_psv(const, [(1, 1), (3, 3)], (2, 2), [-1.5, 0.3, 2.0])
    np.testing.assert_allclose(psv.slabs, 0.25, atol=1e-15)
    views = rng.uniform(size=(2, 6, 6))
    psv = build_psv(views, [(1, 1), (3, 3)], (2, 1), [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(psv.slabs[:, 1], views)
    assert psv.num_inputs == 2 and psv.num_planes == 3


def test_psv_errors(rng):
    views = rng.uniform(size=(1, 4, 4))
    with pytest.raises(ValueError):
        build_psv(views, [(1, 1)], (1, 2), [])
    with pytest.raises(ValueError):
        build_psv(views, [(1, 1)], (1, 2), [0.0, 0.0])
    with pytest.raises(ValueError):
        build_psv(views, [(1, 1)], (1, 1), [0.0, 1.0])


def test_psv_matches_backward_warp(rng):
    views = rng.uniform(size=(2, 7, 8))
    pattern = [(1, 1), (3, 2)]
    psv = build_psv(views, pattern, (2, 3), [-0.7, 0.4])
    for k, p in enumerate(pattern):
        for l, d in enumerate([-0.7, 0.4]):
            ref = backward_warp(views[k], p, (2, 3), np.full((7, 8), d))
            np.testing.assert_array_equal(psv.slabs[k, l], ref)


def test_blend_examples(rng):
    a, b = rng.uniform(size=(2, 4, 4))
    np.testing.assert_array_equal(blend_confidence(a[None], np.ones((1, 4, 4))), a)
    np.testing.assert_allclose(blend_confidence(np.stack([a, b]), np.full((2, 4, 4), 0.5)), (a + b) / 2)
    sel = rng.integers(0, 2, size=(4, 4))
    onehot = np.stack([sel == 0, sel == 1]).astype(float)
    np.testing.assert_array_equal(blend_confidence(np.stack([a, b]), onehot), np.where(sel == 0, a, b))
    with pytest.raises(ValueError):
        blend_confidence(np.stack([a, b]), np.ones((1, 4, 4)))
    with pytest.raises(ValueError):
        blend_confidence(np.stack([a, b]), np.ones((2, 3, 4)))


@settings(max_examples=30, deadline=None)
@given(logits=arrays(np.float64, (3, 4, 5), elements=st.floats(-5, 5)),
       imgs=arrays(np.float64, (3, 4, 5), elements=st.floats(0, 1)))
def test_blend_stays_within_hull(logits, imgs):
    w = np.exp(logits)
    w /= w.sum(axis=0)
    out = blend_confidence(imgs, ConfidenceMaps((1, 1), w))
    assert np.all(out >= imgs.min(axis=0) - 1e-12)
    assert np.all(out <= imgs.max(axis=0) + 1e-12)


def test_map_type_validation():
    with pytest.raises(ValueError):
        DisparityMap((1, 1), np.full((2, 2), np.inf))
    with pytest.raises(ValueError):
        ConfidenceMaps((1, 1), np.full((2, 3, 3), 0.6))
    with pytest.raises(ValueError):
        ConfidenceMaps((1, 1), np.full((3, 3), 1.0))
