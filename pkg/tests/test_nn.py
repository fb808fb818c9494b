import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lfkit import nn
from lfkit.geometry import backward_warp
from lfkit.nn import FeatureStack, Tensor


def _naive_conv(x, w, b):
    """Direct nested-loop cross-correlation with zero padding."""
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((bsz, cout, h, wd))
    for n in range(bsz):
        for o in range(cout):
            for y in range(h):
                for xx in range(wd):
                    out[n, o, y, xx] = np.sum(xp[n, :, y:y + kh, xx:xx + kw] * w[o]) + b[o]
    return out


# --- conv2d -------------------------------------------------------------------


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 1, 5, 6))
    y = nn.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(y.data, x)


def test_conv_zero_padding_counts():
    c = 0.3
    y = nn.conv2d(Tensor(np.full((1, 1, 5, 5), c)), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1))).data[0, 0]
    assert y[2, 2] == pytest.approx(9 * c)
    assert y[0, 0] == pytest.approx(4 * c)
    assert y[0, 2] == pytest.approx(6 * c)


def test_conv_hand_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[0, 0, 1, 2] = -1.0
    y = nn.conv2d(Tensor(x), Tensor(w)).data[0, 0]
    np.testing.assert_array_equal(y, [[1 - 2, 2 - 0], [3 - 4, 4 - 0]])


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_matches_naive(rng, k):
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    np.testing.assert_allclose(nn.conv2d(Tensor(x), Tensor(w), Tensor(b)).data, _naive_conv(x, w, b), atol=1e-12)


def test_conv_errors(rng):
    with pytest.raises(ValueError):
        nn.conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 2, 2, 2))))
    with pytest.raises(ValueError):
        nn.conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 3, 3, 3))))
    with pytest.raises(ValueError):
        nn.conv2d(Tensor(rng.normal(size=(2, 4, 4))), Tensor(rng.normal(size=(1, 2, 3, 3))))
    with pytest.raises(ValueError):
        nn.conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 2, 3, 3))),
                  Tensor(np.zeros(2)))


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10 ** 6))
def test_conv_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 1, 2, 5, 5))
    w = Tensor(r.normal(size=(3, 2, 3, 3)))
    lhs = nn.conv2d(Tensor(a * x + b * y), w).data
    rhs = a * nn.conv2d(Tensor(x), w).data + b * nn.conv2d(Tensor(y), w).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# --- activations and softmax ---------------------------------------------------


def test_activation_definitions():
    x = Tensor(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_array_equal(nn.activation(x, "relu").data, [0, 0, 3])
    np.testing.assert_allclose(nn.activation(x, "leaky_relu", 0.1).data, [-0.2, 0, 3])
    assert nn.activation(x, "identity").data is x.data
    with pytest.raises(ValueError):
        nn.activation(x, "gelu")


def test_relu_subgradient_at_zero():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    nn.activation(x, "relu").sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_softmax_examples():
    one = nn.channel_softmax(Tensor(np.random.default_rng(0).normal(size=(2, 1, 3, 3)))).data
    np.testing.assert_array_equal(one, 1.0)
    eq = nn.channel_softmax(Tensor(np.full((1, 4, 2, 2), 1.7))).data
    np.testing.assert_allclose(eq, 0.25)
    x = np.zeros((1, 2, 1, 1))
    x[0, 1] = np.log(3)
    np.testing.assert_allclose(nn.channel_softmax(Tensor(x)).data.ravel(), [0.25, 0.75])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 5, 3, 3), elements=st.floats(-30, 30)))
def test_softmax_positive_and_normalized(x):
    s = nn.channel_softmax(Tensor(x)).data
    assert np.all(s > 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_masked_softmax(rng):
    x = rng.normal(size=(2, 4, 3, 3))
    mask = np.array([True, True, False, False])[None, :, None, None]
    s = nn.channel_softmax(Tensor(x), mask).data
    np.testing.assert_array_equal(s[:, 2:], 0.0)
    np.testing.assert_allclose(s[:, :2], nn.channel_softmax(Tensor(x[:, :2])).data, atol=1e-15)
    with pytest.raises(ValueError):
        nn.channel_softmax(Tensor(x), np.zeros((1, 4, 1, 1), dtype=bool))


def test_scaled_tanh_range(rng):
    y = nn.scaled_tanh(Tensor(rng.normal(scale=10, size=1000)), -4.0, 4.0).data
    assert np.all(y >= -4) and np.all(y <= 4)


# --- relayout -------------------------------------------------------------------


def test_relayout_hand_trace():
    # M=N=2, H=W=1, f=1: spatial index = view, angular index = (u, v) inside a single pixel
    t = Tensor(np.arange(4.0).reshape(4, 1, 1, 1))
    a = nn.relayout(FeatureStack(t, "spatial", (2, 2), (1, 1)))
    assert a.layout == "angular" and a.tensor.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(a.tensor.data[0, 0], [[0, 1], [2, 3]])


def test_relayout_involution_and_mapping(rng):
    m, n, c, h, w = 2, 3, 4, 5, 6
    data = rng.normal(size=(m * n, c, h, w))
    f = FeatureStack(Tensor(data), "spatial", (m, n), (h, w))
    a = nn.relayout(f)
    assert a.tensor.data.size == data.size
    # angular[y*w + x, ch, u, v] == spatial[u*n + v, ch, y, x]
    assert a.tensor.data[2 * w + 3, 1, 1, 2] == data[1 * n + 2, 1, 2, 3]
    back = nn.relayout(a)
    assert back.layout == "spatial"
    np.testing.assert_array_equal(back.tensor.data, data)
    with pytest.raises(ValueError):
        FeatureStack(Tensor(data), "angular", (m, n), (h, w))
    with pytest.raises(ValueError):
        FeatureStack(Tensor(data), "diagonal", (m, n), (h, w))


# --- warp -----------------------------------------------------------------------


def test_warp_matches_geometry(rng):
    src = rng.uniform(size=(2, 3, 7, 8))
    disp = rng.uniform(-1.5, 1.5, size=(2, 1, 7, 8))
    offsets = rng.integers(-2, 3, size=(2, 3, 2))
    got = nn.warp(Tensor(src), Tensor(disp), offsets).data
    for b in range(2):
        for k in range(3):
            du, dv = offsets[b, k]
            ref = backward_warp(src[b, k], (3, 3), (3 + du, 3 + dv), disp[b, 0])
            np.testing.assert_allclose(got[b, k], ref, atol=1e-14)


# --- adam ------------------------------------------------------------------------


def test_adam_examples():
    store = nn.ParamStore()
    store.add("w", np.array([1.0]))
    nn.adam_step(store, {"w": np.zeros(1)}, 1e-4)
    assert store["w"][0] == 1.0
    store = nn.ParamStore()
    store.add("w", np.array([0.0]))
    nn.adam_step(store, {"w": np.array([0.5])}, 1e-4)
    assert store["w"][0] == pytest.approx(-1e-4 * 0.5 / (0.5 + 1e-8), rel=1e-12)
    assert store.steps["w"] == 1
    store = nn.ParamStore()
    store.add("w", np.array([2.0]))
    nn.adam_step(store, {"w": np.array([1.0])}, 1e-2)
    first = store["w"][0]
    nn.adam_step(store, {"w": np.array([1.0])}, 1e-2)
    assert store["w"][0] < first < 2.0


def test_adam_errors():
    store = nn.ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(KeyError):
        nn.adam_step(store, {}, 1e-3)
    with pytest.raises(ValueError):
        nn.adam_step(store, {"w": np.zeros(3)}, 1e-3)


def test_param_store_moments_and_copy():
    store = nn.ParamStore(7)
    store.add("a", np.ones((2, 3)))
    assert store.m["a"].shape == store.v["a"].shape == (2, 3)
    dup = store.copy()
    dup.params["a"][0, 0] = 5.0
    assert store["a"][0, 0] == 1.0
    assert store.num_values() == 6


def test_checkpoint_round_trip(tmp_path, rng):
    store = nn.ParamStore(3)
    store.add("x.weight", rng.normal(size=(2, 1, 3, 3)))
    store.add("x.bias", rng.normal(size=2))
    nn.adam_step(store, {k: rng.normal(size=v.shape) for k, v in store.params.items()}, 1e-3)
    nn.save_checkpoint(tmp_path / "ck", store, {"model_config": {"k_max": 4}})
    back, meta = nn.load_checkpoint(tmp_path / "ck")
    assert back.names() == store.names()
    for k in store.params:
        np.testing.assert_array_equal(back[k], store[k])
        assert back.steps[k] == 1
    assert meta["format"] == "lfkit-params-v1" and meta["seed"] == 3
    assert meta["model_config"] == {"k_max": 4}
    raw = np.fromfile(tmp_path / "ck" / "params.bin", dtype="<f8")
    np.testing.assert_array_equal(raw[:18], store["x.weight"].ravel())


# --- autograd plumbing -------------------------------------------------------------


def test_broadcast_and_indexing_gradients(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)), requires_grad=True)
    ((a * b + b)[1:, ::2].sum() + a[[0, 0, 2]].sum()).backward()
    ga = np.zeros((3, 4))
    ga[1:, ::2] += b.data[::2]
    ga[0] += 2
    ga[2] += 1
    np.testing.assert_allclose(a.grad, ga)
    gb = np.zeros(4)
    gb[::2] = a.data[1:, ::2].sum(axis=0) + 2
    np.testing.assert_allclose(b.grad, gb)


def test_shared_node_accumulates(rng):
    x = Tensor(rng.normal(size=5), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_precision_flag():
    with nn.precision("single"):
        assert Tensor(np.ones(2)).data.dtype == np.float32
        assert nn.get_dtype() == np.float32
    assert Tensor(np.ones(2)).data.dtype == np.float64
    with pytest.raises(ValueError):
        nn.set_precision("half")


# --- finite-difference checks ---------------------------------------------------------


def test_grad_check_quadratic(rng):
    err = nn.grad_check(lambda p: (p["w"] * p["w"]).sum(), {"w": rng.normal(size=7)})
    assert err <= 1e-7


def test_grad_check_reports_wrong_gradient(rng):
    def bad(p):
        w = p["w"]
        # forward w**2, backward claims 3w
        return nn.tensor.make(w.data ** 2, (w,), lambda g: (g * 3 * w.data,)).sum()

    assert nn.grad_check(bad, {"w": rng.normal(size=4) + 2}) > 0.1


def test_grad_check_non_finite():
    with pytest.raises(FloatingPointError):
        nn.grad_check(lambda p: (p["w"] * np.inf).sum(), {"w": np.ones(2)})


LAYER_TOL = 1e-4


@pytest.mark.parametrize("kind", ["smooth_leaky_relu", "softplus", "tanh", "identity"])
def test_grad_activation(rng, kind):
    x = rng.normal(size=(2, 3, 4, 4))
    proj = rng.normal(size=x.shape)
    err = nn.grad_check(lambda p: (nn.activation(p["x"], kind) * proj).sum(), {"x": x})
    assert err <= LAYER_TOL


def test_grad_leaky_relu_away_from_kink(rng):
    x = rng.normal(size=(3, 5))
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    err = nn.grad_check(lambda p: (nn.activation(p["x"], "leaky_relu") * p["x"]).sum(), {"x": x})
    assert err <= LAYER_TOL


def test_grad_conv(rng):
    params = {"x": rng.normal(size=(2, 3, 6, 5)), "w": rng.normal(size=(4, 3, 3, 3)), "b": rng.normal(size=4)}
    proj = rng.normal(size=(2, 4, 6, 5))
    err = nn.grad_check(lambda p: (nn.conv2d(p["x"], p["w"], p["b"]) * proj).sum(), params)
    assert err <= LAYER_TOL


def test_grad_conv_activation_stack(rng):
    params = {"x": rng.normal(size=(1, 2, 5, 5)), "w1": rng.normal(size=(3, 2, 3, 3)) * 0.5,
              "w2": rng.normal(size=(2, 3, 5, 5)) * 0.3}

    def f(p):
        h = nn.activation(nn.conv2d(p["x"], p["w1"]), "smooth_leaky_relu")
        return nn.activation(nn.conv2d(h, p["w2"]), "tanh").sum()

    assert nn.grad_check(f, params) <= LAYER_TOL


def test_grad_softmax(rng):
    proj = rng.normal(size=(2, 3, 4, 4))
    mask = np.array([True, False, True])[None, :, None, None]
    for m in (None, mask):
        err = nn.grad_check(lambda p: (nn.channel_softmax(p["x"], m) * proj).sum(),
                            {"x": rng.normal(size=(2, 3, 4, 4))})
        assert err <= LAYER_TOL


def test_grad_scaled_tanh(rng):
    proj = rng.normal(size=(3, 4))
    assert nn.grad_check(lambda p: (nn.scaled_tanh(p["x"], -4, 4) * proj).sum(),
                         {"x": rng.normal(size=(3, 4))}) <= LAYER_TOL


def test_grad_relayout(rng):
    proj = rng.normal(size=(6, 2, 2, 3))

    def f(p):
        s = FeatureStack(p["x"], "spatial", (2, 3), (3, 2))
        return (nn.relayout(s).tensor * proj).sum()

    assert nn.grad_check(f, {"x": rng.normal(size=(6, 2, 3, 2))}) <= LAYER_TOL


def test_grad_warp(rng):
    src = rng.uniform(size=(2, 2, 6, 7))
    disp = rng.uniform(-0.9, 0.9, size=(2, 1, 6, 7))
    offsets = np.array([[[1, 0], [-1, 2]], [[0, 1], [2, -1]]])
    proj = rng.normal(size=(2, 2, 6, 7))
    err = nn.grad_check(lambda p: (nn.warp(p["src"], p["disp"], offsets) * proj).sum(),
                        {"src": src, "disp": disp}, delta=1e-6)
    assert err <= LAYER_TOL


def test_grad_tensor_ops(rng):
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    a0 = np.where(np.abs(a0) < 0.05, 0.5, a0)

    def f(p):
        a, b = p["a"], p["b"]
        c = nn.concat([a, b * 2.0], axis=0)
        d = nn.stack([a, b], axis=1).reshape(3, 8).transpose((1, 0))
        return (nn.tabs(c).sum() + (d[2:6] * d[:4]).sum() + (a - b).mean() + (a / 3.0).sum(axis=0)[1])

    assert nn.grad_check(f, {"a": a0, "b": b0}) <= LAYER_TOL
