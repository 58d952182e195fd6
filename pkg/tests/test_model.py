"""Network and optimizer tests: exact adjoints, finite differences, copying."""

import numpy as np
import pytest

from cwseg.model import (
    SGD,
    ReferenceModel,
    conv2d_backward,
    conv2d_forward,
    upsample2x_backward,
    upsample2x_forward,
)


def loop_conv3x3(x, w, b, stride):
    """Explicit-loop 3x3 convolution with zero padding 1."""
    n, cin, h, wid = x.shape
    cout = w.shape[0]
    xp = np.zeros((n, cin, h + 2, wid + 2), dtype=np.float64)
    xp[:, :, 1:-1, 1:-1] = x
    ho = (h + 2 - 3) // stride + 1
    wo = (wid + 2 - 3) // stride + 1
    y = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for co in range(cout):
            for r in range(ho):
                for c in range(wo):
                    acc = b[co]
                    for ci in range(cin):
                        for dr in range(3):
                            for dc in range(3):
                                acc += (
                                    w[co, ci, dr, dc]
                                    * xp[i, ci, r * stride + dr, c * stride + dc]
                                )
                    y[i, co, r, c] = acc
    return y


def test_conv_forward_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    for stride in (1, 2):
        y, _ = conv2d_forward(x, w, b, stride=stride)
        ref = loop_conv3x3(x, w, b, stride)
        assert y.shape == ref.shape
        assert np.allclose(y, ref, atol=1e-10)


def test_conv_1x1_is_channel_mixing(rng):
    x = rng.normal(size=(1, 3, 4, 4))
    w = rng.normal(size=(2, 3, 1, 1))
    b = rng.normal(size=2)
    y, _ = conv2d_forward(x, w, b, stride=1)
    ref = np.einsum("oc,ichw->iohw", w[:, :, 0, 0], x) + b.reshape(1, 2, 1, 1)
    assert np.allclose(y, ref)


def test_conv_backward_is_exact_adjoint(rng):
    # conv is linear in x with w fixed and linear in w with x fixed, so the
    # adjoint identity <conv(.), gy> == <., grad> holds per argument (b = 0)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = np.zeros(4)
    for stride in (1, 2):
        y, cols = conv2d_forward(x, w, b, stride=stride)
        gy = rng.normal(size=y.shape)
        gx, gw, gb = conv2d_backward(gy, cols, w, x.shape, stride=stride)
        assert np.isclose((y * gy).sum(), (x * gx).sum())
        assert np.isclose((y * gy).sum(), (w * gw).sum())
        assert np.allclose(gb, gy.sum(axis=(0, 2, 3)))


def test_conv_weight_gradient_finite_differences(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=2)
    y, cols = conv2d_forward(x, w, b, stride=1)
    gy = rng.normal(size=y.shape)
    _, gw, gb = conv2d_backward(gy, cols, w, x.shape, stride=1)

    step = 1e-6
    for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (0, 1, 1, 0)]:
        wp = w.copy()
        wp[idx] += step
        wm = w.copy()
        wm[idx] -= step
        up = (conv2d_forward(x, wp, b)[0] * gy).sum()
        dn = (conv2d_forward(x, wm, b)[0] * gy).sum()
        assert gw[idx] == pytest.approx((up - dn) / (2 * step), rel=1e-4)
    for j in range(2):
        bp = b.copy()
        bp[j] += step
        bm = b.copy()
        bm[j] -= step
        up = (conv2d_forward(x, w, bp)[0] * gy).sum()
        dn = (conv2d_forward(x, w, bm)[0] * gy).sum()
        assert gb[j] == pytest.approx((up - dn) / (2 * step), rel=1e-4)


def test_upsample_doubles_and_keeps_constants(rng):
    x = np.full((1, 2, 4, 4), 3.5)
    y = upsample2x_forward(x)
    assert y.shape == (1, 2, 8, 8)
    assert np.allclose(y, 3.5)
    # exact adjoint
    x = rng.normal(size=(2, 3, 4, 4))
    y = upsample2x_forward(x)
    gy = rng.normal(size=y.shape)
    gx = upsample2x_backward(gy)
    assert np.isclose((y * gy).sum(), (x * gx).sum())


def test_upsample_linear_ramp_interpolates(rng):
    # half-pixel alignment: interpolating a linear ramp stays linear away
    # from the clamped borders
    x = np.arange(6.0).reshape(1, 1, 1, 6).repeat(2, axis=2)
    y = upsample2x_forward(x)
    inner = y[0, 0, 0, 1:-1]
    diffs = np.diff(inner)
    assert np.allclose(diffs, 0.5)


def test_model_output_shape_and_param_count():
    model = ReferenceModel(num_classes=4, rng=np.random.default_rng(0))
    x = np.zeros((2, 3, 32, 32), dtype=np.float32)
    logits = model.forward(x)
    assert logits.shape == (2, 4, 32, 32)
    assert model.num_parameters() == 27_724


def test_model_rejects_bad_spatial_dims():
    model = ReferenceModel(num_classes=4, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="divisible"):
        model.forward(np.zeros((1, 3, 30, 32), dtype=np.float32))
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 4, 32, 32), dtype=np.float32))


def test_model_deterministic_init_and_forward():
    a = ReferenceModel(num_classes=3, rng=np.random.default_rng(7))
    b = ReferenceModel(num_classes=3, rng=np.random.default_rng(7))
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    x = np.random.default_rng(1).random((1, 3, 16, 16)).astype(np.float32)
    assert np.array_equal(a.forward(x), b.forward(x))


def test_model_full_gradient_finite_differences():
    # float64 weights so finite differences are not drowned by forward noise
    rng = np.random.default_rng(3)
    model = ReferenceModel(num_classes=3, rng=rng, dtype=np.float64)
    x = rng.random((1, 3, 16, 16))
    logits, cache = model.forward(x, want_cache=True)
    gy = rng.normal(size=logits.shape)
    grads = model.backward(cache, gy)

    def objective():
        return float((model.forward(x) * gy).sum())

    step = 1e-6
    checked = 0
    for name in ("enc1.w", "enc3.w", "dec2.w", "head.w", "dec1.b"):
        p = model.params[name]
        flat_indices = np.linspace(0, p.size - 1, 4, dtype=int)
        for fi in flat_indices:
            idx = np.unravel_index(fi, p.shape)
            orig = p[idx]
            p[idx] = orig + step
            up = objective()
            p[idx] = orig - step
            dn = objective()
            p[idx] = orig
            numeric = (up - dn) / (2 * step)
            denom = max(abs(numeric), 1e-6)
            assert abs(grads[name][idx] - numeric) / denom < 1e-3, name
            checked += 1
    assert checked == 20


def test_weight_copy_and_clone(rng):
    src = ReferenceModel(num_classes=4, rng=np.random.default_rng(0))
    dst = ReferenceModel(num_classes=4, rng=np.random.default_rng(99))
    dst.copy_weights_from(src)
    for k, v in src.params.items():
        assert np.array_equal(dst.params[k], v)
        assert dst.params[k] is not v  # independent storage
    x = rng.random((1, 3, 16, 16)).astype(np.float32)
    assert np.array_equal(src.forward(x), dst.forward(x))

    cl = src.clone()
    cl.params["head.w"][...] += 1.0
    assert not np.array_equal(src.params["head.w"], cl.params["head.w"])


def test_state_dict_roundtrip_and_validation():
    model = ReferenceModel(num_classes=4, rng=np.random.default_rng(0))
    state = model.state_dict()
    other = ReferenceModel(num_classes=4, rng=np.random.default_rng(5))
    other.load_state_dict(state)
    for k in state:
        assert np.array_equal(other.params[k], state[k])
    with pytest.raises(ValueError):
        other.load_state_dict({k: v for k, v in list(state.items())[:-1]})
    bad = dict(state)
    bad["head.w"] = np.zeros((1, 1, 1, 1), dtype=np.float32)
    with pytest.raises(ValueError):
        other.load_state_dict(bad)


def test_sgd_momentum_and_weight_decay_reference():
    # one parameter treated as weight (decayed), one as bias (not decayed)
    params = {"layer.w": np.array([1.0]), "layer.b": np.array([2.0])}
    grads = {"layer.w": np.array([0.5]), "layer.b": np.array([0.5])}
    opt = SGD(momentum=0.9, weight_decay=0.01)
    lr = 0.1

    vw = 0.5 + 0.01 * 1.0
    vb = 0.5
    opt.step(params, grads, lr)
    assert params["layer.w"][0] == pytest.approx(1.0 - lr * vw)
    assert params["layer.b"][0] == pytest.approx(2.0 - lr * vb)

    w1 = 1.0 - lr * vw
    vw2 = 0.9 * vw + (0.5 + 0.01 * w1)
    vb2 = 0.9 * vb + 0.5
    opt.step(params, grads, lr)
    assert params["layer.w"][0] == pytest.approx(w1 - lr * vw2)
    assert params["layer.b"][0] == pytest.approx(2.0 - lr * vb - lr * vb2)


def test_sgd_zero_momentum_is_plain_descent():
    params = {"p.w": np.array([1.0, 2.0])}
    grads = {"p.w": np.array([1.0, -1.0])}
    opt = SGD(momentum=0.0, weight_decay=0.0)
    opt.step(params, grads, 0.5)
    assert np.allclose(params["p.w"], [0.5, 2.5])


def test_sgd_state_roundtrip(rng):
    params = {"a.w": rng.random(3), "b.b": rng.random(2)}
    grads = {"a.w": rng.random(3), "b.b": rng.random(2)}
    opt = SGD()
    opt.step(params, grads, 0.1)
    saved = opt.state_dict()

    params2 = {k: v.copy() for k, v in params.items()}
    opt2 = SGD()
    opt2.load_state_dict(saved)
    opt.step(params, grads, 0.1)
    opt2.step(params2, grads, 0.1)
    for k in params:
        assert np.array_equal(params[k], params2[k])
