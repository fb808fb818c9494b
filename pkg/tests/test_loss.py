import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfkit import nn
from lfkit.core import LightField
from lfkit.geometry import ConfidenceMaps, DisparityMap
from lfkit.loss import LossWeights, l1_loss, objective, second_order_smoothness, total_loss
from lfkit.model import CoarseOutput
from lfkit.nn import Tensor


def test_l1_examples(rng):
    a = rng.uniform(size=(2, 2))
    assert l1_loss(a, a) == 0.0
    assert l1_loss(a, a + 0.5) == pytest.approx(2.0, abs=1e-15)
    x, y = rng.normal(size=(2, 3, 4, 5))
    ref = sum(abs(float(p) - float(q)) for p, q in zip(x.ravel(), y.ravel()))
    assert l1_loss(x, y) == pytest.approx(ref, abs=1e-12)
    with pytest.raises(ValueError):
        l1_loss(np.zeros(3), np.zeros(4))


def test_l1_accepts_lightfields(rng):
    a = LightField(rng.uniform(size=(2, 2, 3, 3, 1)))
    b = LightField(np.clip(a.data + 0.1, 0, 1))
    assert l1_loss(a, b) == pytest.approx(np.abs(a.data - b.data).sum())


def test_smoothness_constant_and_affine():
    y, x = np.mgrid[0:9, 0:7].astype(float)
    assert second_order_smoothness([np.full((5, 5), 3.0)]) == 0.0
    assert second_order_smoothness([DisparityMap((1, 1), 0.3 * x - 1.1 * y + 2)]) == pytest.approx(0.0, abs=1e-12)


def test_smoothness_quadratic_hand_value():
    x = np.tile(np.arange(8.0), (8, 1))
    # xx term is 2 on each of the 6x6 interior sites; yy and mixed terms vanish
    assert second_order_smoothness([x ** 2]) == 72.0
    assert second_order_smoothness([(x ** 2).T]) == 72.0


def test_smoothness_mixed_term():
    y, x = np.mgrid[0:4, 0:4].astype(float)
    # D = xy has unit mixed differences on the 3x3 forward-difference grid, both orders
    assert second_order_smoothness([x * y]) == 18.0


def test_smoothness_errors():
    with pytest.raises(ValueError):
        second_order_smoothness([])
    with pytest.raises(ValueError):
        second_order_smoothness([np.zeros((2, 5))])


def test_smoothness_tensor_matches_arrays(rng):
    d = rng.normal(size=(3, 1, 6, 7))
    assert float(second_order_smoothness(Tensor(d)).data) == pytest.approx(
        second_order_smoothness(list(d[:, 0])), rel=1e-12)


def _coarse_output(gt: LightField, noise, targets, disp):
    data = np.array(gt.data)
    for i, q in enumerate(targets):
        data[q[0] - 1, q[1] - 1] += noise[i]
    h, w = gt.height, gt.width
    return CoarseOutput(
        LightField(data),
        {q: DisparityMap(q, disp[i]) for i, q in enumerate(targets)},
        {q: ConfidenceMaps(q, np.ones((1, h, w))) for q in targets},
    )


def test_total_loss_zero_on_perfect_fit(rng):
    gt = LightField(rng.uniform(size=(3, 3, 5, 5, 1)))
    targets = [(1, 2), (2, 2)]
    co = _coarse_output(gt, np.zeros((2, 5, 5, 1)), targets, np.ones((2, 5, 5)))
    assert total_loss(gt, co, gt) == 0.0


def test_total_loss_weights(rng):
    gt = LightField(rng.uniform(0.2, 0.8, size=(3, 3, 5, 5, 1)))
    targets = [(1, 2), (3, 1)]
    noise = rng.normal(scale=0.05, size=(2, 5, 5, 1))
    disp = rng.normal(size=(2, 5, 5))
    co = _coarse_output(gt, noise, targets, disp)
    refined = LightField(gt.data + 0.01)
    ls = sum(l1_loss(gt.view(q), co.intermediate.view(q)) for q in targets)
    lr = sum(l1_loss(gt.view(q), refined.view(q)) for q in targets)
    lsm = second_order_smoothness(list(disp))
    w = LossWeights(0.7, 0.0, 1.3)
    assert total_loss(gt, co, refined, w) == pytest.approx(0.7 * ls + 1.3 * lr, rel=1e-12)
    full = total_loss(gt, co, refined)
    assert full == pytest.approx(ls + 0.001 * lsm + lr, rel=1e-12)
    assert total_loss(gt, co, refined, LossWeights().scaled(3.0)) == pytest.approx(3 * full, rel=1e-12)
    assert full >= 0


def test_total_loss_permutation_invariant(rng):
    gt = rng.uniform(size=(4, 5, 6))
    co = gt + rng.normal(scale=0.1, size=gt.shape)
    re = gt + rng.normal(scale=0.1, size=gt.shape)
    d = rng.normal(size=(4, 5, 6))
    perm = rng.permutation(4)
    a = objective(gt, co, re, d)
    b = objective(gt[perm], co[perm], re[perm], d[perm])
    assert a == pytest.approx(b, rel=1e-12)


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0)
    with pytest.raises(ValueError):
        LossWeights(1.0, np.nan)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), s=st.floats(0.1, 10))
def test_objective_scaling_property(seed, s):
    r = np.random.default_rng(seed)
    gt, co, re = r.uniform(size=(3, 2, 4, 4))
    d = r.normal(size=(2, 4, 4))
    w = LossWeights(r.uniform(), r.uniform(), r.uniform())
    assert objective(gt, co, re, d, w.scaled(s)) == pytest.approx(s * objective(gt, co, re, d, w), rel=1e-10)


def test_objective_normalized(rng):
    gt, co, re = rng.uniform(size=(3, 2, 5, 6))
    d = rng.normal(size=(2, 1, 5, 6))
    w = LossWeights(1.0, 0.5, 2.0)
    raw_s, raw_r = l1_loss(gt, co), l1_loss(gt, re)
    raw_sm = second_order_smoothness(list(d[:, 0]))
    expect = raw_s / 60 + 0.5 * raw_sm / (2 * 3 * 4) + 2.0 * raw_r / 60
    assert objective(gt, co, re, d, w, normalize=True) == pytest.approx(expect, rel=1e-12)


def test_objective_gradient(rng):
    gt = rng.uniform(size=(2, 5, 5))
    params = {"co": gt + rng.normal(scale=0.1, size=gt.shape), "re": gt + rng.normal(scale=0.1, size=gt.shape),
              "d": rng.normal(size=(2, 1, 5, 5))}
    err = nn.grad_check(lambda p: objective(Tensor(gt), p["co"], p["re"], p["d"], normalize=True), params,
                        delta=1e-7)
    assert err <= 1e-3
