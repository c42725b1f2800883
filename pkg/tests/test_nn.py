import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oacsl.channel import PathParams, gen_channel
from oacsl.clinalg import random_complex_gaussian
from oacsl.nn import (
    Adam,
    BatchNorm,
    BuildContext,
    Constellation,
    ModelSpec,
    NonFiniteGradientError,
    SpecError,
    build_model,
    crelu,
    crelu_backward,
    head_loss,
    infer_shapes,
    qam_activate,
    qam_backward,
)

from conftest import fd_grad, rel_err


def brute_force_snap(v: float, levels) -> float:
    """Scan every level; ties go to the smaller magnitude, then the positive one."""
    best = None
    for lv in levels:
        if best is None:
            best = lv
            continue
        d, db = abs(v - lv), abs(v - best)
        if d < db or (d == db and (abs(lv) < abs(best) or (abs(lv) == abs(best) and lv > best))):
            best = lv
    return best


def test_level_set():
    c = Constellation(4, 1.0)
    lv = c.axis_levels()
    assert lv[0] == -1.0 and lv[-1] == 1.0
    assert np.isclose(lv[1], -1 / 3)  # (3 - n) / (n - 1) for n = 4
    assert len(c.points()) == 16
    assert np.array_equal(Constellation(2, 1.0).axis_levels(), [-1.0, 1.0])


def test_qam_examples():
    c4 = Constellation(4, 1.0)
    assert np.isclose(qam_activate(0.2 + 0.9j, c4), 1 / 3 + 1j)
    assert qam_activate(-0.1 + 0j, Constellation(2, 1.0)).real == -1
    assert np.isclose(qam_activate(2 / 3 + 0j, c4).real, 1 / 3)


@pytest.mark.parametrize("n", [2, 4, 8])
@pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
def test_qam_matches_brute_force_grid(n, delta):
    c = Constellation(n, delta)
    lv = list(c.axis_levels())
    axis = np.linspace(-1.5 * delta, 1.5 * delta, 97)
    mids = [(a + b) / 2 for a, b in zip(lv, lv[1:])]
    axis = np.concatenate([axis, mids, lv])[:100]
    grid = axis[:, None] + 1j * axis[None, :]
    got = qam_activate(grid, c)
    want_axis = np.array([brute_force_snap(v, lv) for v in axis])
    assert np.array_equal(got.real, np.broadcast_to(want_axis[:, None], grid.shape))
    assert np.array_equal(got.imag, np.broadcast_to(want_axis[None, :], grid.shape))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 3, 4, 8]), st.floats(0.1, 5.0),
       st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=20))
def test_qam_idempotent_and_optimal(n, delta, values):
    c = Constellation(n, delta)
    x = np.array(values) + 1j * np.array(values[::-1])
    y = qam_activate(x, c)
    assert np.array_equal(qam_activate(y, c), y)
    lv = c.axis_levels()
    for v, out in zip(x.real, y.real):
        assert abs(v - out) <= np.min(np.abs(v - lv))


def test_qam_backward_examples():
    c = Constellation(4, 1.0)
    assert qam_backward(0.5 + 0j, 2 + 3j, c) == 2 + 3j
    assert qam_backward(1.7 + 0.2j, 2 + 3j, c) == 3j
    far = np.array([5 + 5j, -3 - 7j])
    assert np.all(qam_backward(far, np.ones(2) * (1 + 1j), c) == 0)
    with pytest.raises(ValueError):
        qam_backward(np.ones(2), np.ones(3), c)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_straight_through_never_scales(seed):
    rng = np.random.default_rng(seed)
    x = random_complex_gaussian(50, 1, 2.0, rng).ravel()
    g = random_complex_gaussian(50, 1, 1.0, rng).ravel()
    out = qam_backward(x, g, Constellation(4, 1.0))
    assert np.all((out.real == 0) | (out.real == g.real))
    assert np.all((out.imag == 0) | (out.imag == g.imag))


def test_crelu():
    assert crelu(-1 + 2j) == 2j
    assert crelu(3 - 4j) == 3
    assert crelu_backward(3 - 4j, 1 + 1j) == 1


# --- batch norm ---------------------------------------------------------------


def test_batchnorm_constant_batch():
    bn = BatchNorm(3)
    bn.params["beta"][:] = [1 + 2j, -1j, 0.5]
    out = bn.forward(np.full((5, 3), 2 - 1j), training=True)
    assert np.allclose(out, np.broadcast_to(bn.params["beta"], (5, 3)))


def test_batchnorm_training_statistics(rng):
    x = random_complex_gaussian(32, 4, 3.0, rng) + 5
    exact = BatchNorm(4, eps=0.0)
    exact.forward(x, training=True)
    z = exact.normalized()
    for part in (z.real, z.imag):
        assert np.max(np.abs(part.mean(axis=0))) <= 1e-10
        assert np.max(np.abs(part.var(axis=0) - 1)) <= 1e-6
    # with the default eps the variance is var / (var + eps), not 1
    bn = BatchNorm(4)
    bn.forward(x, training=True)
    z = bn.normalized()
    for part, raw in ((z.real, x.real), (z.imag, x.imag)):
        v = raw.var(axis=0)
        assert np.allclose(part.var(axis=0), v / (v + 1e-5), rtol=1e-12, atol=0)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_backward_finite_differences(training, rng):
    bn = BatchNorm(3)
    bn.params["gamma"][:] = [0.5 + 2j, 1.5 - 0.3j, -1 + 1j]
    bn.params["beta"][:] = [0.1j, 0.2, -0.3 + 0.1j]
    bn.running_mean[:] = [0.2 + 0.1j, -0.3j, 0.5]
    bn.running_var[:] = [1.5 + 0.5j, 2 + 2j, 0.7 + 1.1j]
    x = random_complex_gaussian(4, 3, 1.0, rng)
    target = random_complex_gaussian(4, 3, 1.0, rng)
    saved = (bn.running_mean.copy(), bn.running_var.copy())

    def loss():
        bn.running_mean, bn.running_var = saved[0].copy(), saved[1].copy()
        return 0.5 * np.sum(np.abs(bn.forward(x, training) - target) ** 2)

    loss()
    out = bn.forward(x, training)
    bn.running_mean, bn.running_var = saved[0].copy(), saved[1].copy()
    g_x = bn.backward(out - target)
    grads = dict(bn.grads)
    assert rel_err(g_x, fd_grad(loss, x)) <= 1e-4
    for name in ("gamma", "beta"):
        assert rel_err(grads[name], fd_grad(loss, bn.params[name])) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_batchnorm_cancels_amplification(alpha, seed):
    rng = np.random.default_rng(seed)
    x = random_complex_gaussian(16, 5, 1.0, rng)
    bn = BatchNorm(5, eps=0.0)
    bn.forward(x, True)
    a = bn.normalized()
    bn.forward(alpha * x, True)
    assert np.max(np.abs(bn.normalized() - a)) <= 1e-8


def test_batchnorm_conv_layout(rng):
    bn = BatchNorm(2)
    x = random_complex_gaussian(3 * 2 * 4 * 4, 1, 1.0, rng).reshape(3, 2, 4, 4)
    bn.forward(x, True)
    z = bn.normalized()
    assert np.allclose(z.real.mean(axis=(0, 2, 3)), 0, atol=1e-12)


def test_batchnorm_needs_two_samples():
    with pytest.raises(ValueError):
        BatchNorm(2).forward(np.ones((1, 2)), training=True)


# --- head loss ----------------------------------------------------------------


def test_head_loss_uniform_and_saturated():
    loss, _ = head_loss(np.zeros((3, 5)), [0, 1, 4])
    assert math.isclose(loss, math.log(5), rel_tol=1e-14)
    z = np.zeros((2, 4))
    z[0, 2] = z[1, 0] = 30.0
    loss, _ = head_loss(z, [2, 0])
    assert loss <= 1e-9


def test_head_loss_gradient(rng):
    z = random_complex_gaussian(4, 3, 2.0, rng)
    labels = np.array([0, 2, 1, 2])
    _, g = head_loss(z, labels)
    assert np.all(g.imag == 0)
    num = fd_grad(lambda: head_loss(z, labels)[0], z)
    assert rel_err(g, num) <= 1e-5
    p = np.exp(z.real) / np.exp(z.real).sum(axis=1, keepdims=True)
    assert np.allclose(g.real, (p - np.eye(3)[labels]) / 4)


def test_head_loss_label_range():
    with pytest.raises(ValueError):
        head_loss(np.zeros((2, 3)), [0, 3])


# --- Adam ---------------------------------------------------------------------


def test_adam_first_step_is_sign_step():
    p = {"w": np.array([1.0 + 1.0j, -2.0 + 0.5j])}
    start = p["w"].copy()
    Adam(lr=0.01).step(p, {"w": np.array([3.0 - 0.2j, -1e-3 + 5j])})
    delta = p["w"] - start
    assert np.allclose(delta.real, -0.01 * np.sign([3.0, -1e-3]), rtol=1e-4)
    assert np.allclose(delta.imag, -0.01 * np.sign([-0.2, 5]), rtol=1e-4)


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([0.3 - 0.1j])}
    opt = Adam()
    for _ in range(5):
        opt.step(p, {"w": np.zeros(1, complex)})
    assert p["w"][0] == 0.3 - 0.1j


def test_adam_matches_scalar_reference():
    lr, b1, b2, eps = 0.005, 0.9, 0.999, 1e-8
    grads = [0.7 - 0.3j, -1.2 + 0.1j, 0.05 + 2.0j]
    p = {"w": np.array([0.1 + 0.2j])}
    opt = Adam(lr=lr)
    for g in grads:
        opt.step(p, {"w": np.array([g])})

    def scalar(theta, gs):
        m = v = 0.0
        for t, g in enumerate(gs, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        return theta

    assert abs(p["w"][0].real - scalar(0.1, [g.real for g in grads])) <= 1e-12
    assert abs(p["w"][0].imag - scalar(0.2, [g.imag for g in grads])) <= 1e-12


def test_adam_rejects_non_finite():
    p = {"a": np.zeros(2, complex), "b": np.zeros(1, complex)}
    with pytest.raises(NonFiniteGradientError, match="'b'"):
        Adam().step(p, {"a": np.ones(2, complex), "b": np.array([np.nan + 0j])})
    assert np.all(p["a"] == 0)


# --- model composition --------------------------------------------------------


def noiseless_ctx(seed=0, n_t=4, n_r=4, r=2, constellation=None, zero_init=False, **kw):
    def link(o):
        st_ = gen_channel(PathParams(), n_t, n_r, np.random.default_rng([seed, 2, o]), rank=r)
        return st_, np.random.default_rng([seed, 3, o])

    return BuildContext(init_rng=lambda o: np.random.default_rng([seed, 1, o]), make_link=link, rank=r,
                        constellation=constellation, weight_f=0.0, weight_b=0.0, zero_init=zero_init, **kw)


def model_fd_check(model, x, labels, tol=1e-4):
    # zero biases put exact zeros on CReLU kinks, where differences are one-sided
    offsets = np.random.default_rng(99)
    for name, p in model.named_params().items():
        if name.endswith("bias"):
            p[:] = random_complex_gaussian(p.size, 1, 0.1, offsets).ravel()

    def loss():
        return head_loss(model.forward(x, training=True), labels)[0]

    _, g = head_loss(model.forward(x, training=True), labels)
    g_x = model.backward(g)
    grads = model.named_grads()
    params = model.named_params()
    for name, analytic in grads.items():
        num = fd_grad(loss, params[name], step=1e-5)
        if np.linalg.norm(num) < 1e-8:
            # a bias feeding batch norm has no effect on the loss
            assert np.max(np.abs(analytic)) <= 1e-8, name
            continue
        assert rel_err(analytic, num) <= tol, name
    assert rel_err(g_x, fd_grad(loss, x, step=1e-5)) <= tol


def test_single_oac_layer_end_to_end_gradient(rng):
    spec = ModelSpec([{"type": "oac-linear", "out": 4}, {"type": "crelu"}, {"type": "dense-head", "out": 3}])
    model = build_model(spec, (4,), 3, noiseless_ctx())
    x = random_complex_gaussian(6, 4, 1.0, rng)
    model_fd_check(model, x, np.array([0, 1, 2, 0, 1, 2]))


def test_conv_model_end_to_end_gradient(rng):
    spec = ModelSpec(
        [
            {"type": "conv", "out": 2, "kernel": 3, "padding": 1},
            {"type": "batchnorm"},
            {"type": "crelu"},
            {"type": "residual-block", "layers": [{"type": "conv", "out": 2, "kernel": 1}, {"type": "crelu"}]},
            {"type": "oac-conv", "out": 3, "kernel": 2, "stride": 2},
            {"type": "avgpool"},
            {"type": "dense-head", "out": 2},
        ]
    )
    model = build_model(spec, (1, 4, 4), 2, noiseless_ctx())
    x = random_complex_gaussian(3 * 16, 1, 1.0, rng).reshape(3, 1, 4, 4)
    model_fd_check(model, x, np.array([0, 1, 1]))


def test_identity_residual_block(rng):
    spec = ModelSpec(
        [
            {"type": "residual-block", "layers": [
                {"type": "linear", "out": 5}, {"type": "batchnorm"}, {"type": "crelu"}, {"type": "linear", "out": 5}]},
            {"type": "dense-head", "out": 2},
        ]
    )
    model = build_model(spec, (5,), 2, noiseless_ctx(zero_init=True))
    x = random_complex_gaussian(4, 5, 1.0, rng)
    assert np.array_equal(model.layers[0].forward(x, True), x)


def test_activation_resolution_and_removal(rng):
    base = [{"type": "oac-linear", "out": 4}, None, {"type": "dense-head", "out": 2}]

    def spec(act):
        return ModelSpec([d for d in base[:1] + act + base[2:]])

    x = random_complex_gaussian(5, 4, 1.0, rng)
    placeholder = build_model(spec([{"type": "activation"}]), (4,), 2, noiseless_ctx())
    explicit = build_model(spec([{"type": "crelu"}]), (4,), 2, noiseless_ctx())
    with_qam = build_model(spec([{"type": "crelu"}, {"type": "qam-activation"}]), (4,), 2, noiseless_ctx())
    ya = placeholder.forward(x)
    yb = explicit.forward(x)
    assert ya.tobytes() == yb.tobytes()
    # parameters are seeded by weight-layer ordinal, so adding an activation shifts nothing
    for (ka, a), (kb, b) in zip(explicit.named_params().items(), with_qam.named_params().items()):
        assert a.tobytes() == b.tobytes()
    qam = build_model(spec([{"type": "activation"}]), (4,), 2, noiseless_ctx(constellation=Constellation()))
    assert qam.layers[1].kind == "qam-activation"


def test_split_turns_local_layer_into_oac():
    spec = ModelSpec([{"type": "linear", "out": 4}, {"type": "linear", "out": 4}, {"type": "dense-head", "out": 2}],
                     splits=[2])
    model = build_model(spec, (3,), 2, noiseless_ctx())
    assert [l.kind for l in model.layers] == ["linear", "oac-linear", "linear"]


@pytest.mark.parametrize(
    "layers,message",
    [
        ([{"type": "conv", "out": 2}, {"type": "dense-head", "out": 2}], r"layers\[0\].*C x H x W"),
        ([{"type": "linear", "out": 4}], r"dense-head"),
        ([{"type": "linear", "out": 4}, {"type": "dense-head", "out": 3}], r"3 != 2"),
        ([{"type": "mystery"}, {"type": "dense-head", "out": 2}], r"unknown layer type"),
        ([{"type": "linear", "out": 4, "bias": False}, {"type": "dense-head", "out": 2}], r"layers\[0\]\.bias"),
        ([{"type": "residual-block", "layers": [{"type": "linear", "out": 3}]}, {"type": "dense-head", "out": 2}],
         r"residual branch"),
    ],
)
def test_spec_validation(layers, message):
    with pytest.raises(SpecError, match=message):
        infer_shapes(ModelSpec(layers), (5,), 2)


def test_split_out_of_range():
    with pytest.raises(SpecError, match="splits"):
        infer_shapes(ModelSpec([{"type": "dense-head", "out": 2}], splits=[3]), (5,), 2)
