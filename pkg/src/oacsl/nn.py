"""Complex-valued network pieces around the OAC layers.

Activations are batch-first: dense tensors are ``B x F``, feature maps are
``B x C x H x W``. Gradients follow the convention of :mod:`oacsl.oac`
(``dL/dRe + 1j dL/dIm``), so a real component's gradient lives in the real
part and an imaginary component's in the imaginary part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import oac
from .beamform import CovarianceAccumulator, backward_subspace_loss, forward_subspace_loss
from .channel import ChannelState
from .clinalg import DTYPE, random_complex_gaussian

__all__ = [
    "Constellation",
    "qam_activate",
    "qam_backward",
    "crelu",
    "crelu_backward",
    "BatchNorm",
    "head_loss",
    "Adam",
    "NonFiniteGradientError",
    "SpecError",
    "ModelSpec",
    "infer_shapes",
    "build_model",
    "Model",
]


# --- constellation activation ------------------------------------------------


@dataclass(frozen=True)
class Constellation:
    """Square QAM grid with ``levels`` points per axis spanning ``[-delta, delta]``."""

    levels: int = 4
    delta: float = 1.0

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("a constellation needs at least 2 levels per axis")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def delta_r(self) -> float:
        return self.delta

    @property
    def delta_i(self) -> float:
        return self.delta

    def axis_levels(self) -> np.ndarray:
        n = self.levels
        m = np.arange(n)
        return self.delta * ((2 * m - (n - 1)) / (n - 1))

    def points(self) -> np.ndarray:
        lv = self.axis_levels()
        return (lv[:, None] + 1j * lv[None, :]).ravel()


def _snap_axis(v: np.ndarray, levels: np.ndarray, delta: float) -> np.ndarray:
    n = levels.size
    step = 2.0 * delta / (n - 1)
    base = np.floor((v + delta) / step).astype(np.int64)
    best = np.full(v.shape, np.nan)
    best_dist = np.full(v.shape, np.inf)
    # Rounding can put the nearest level one slot away from `base`, so look at
    # three neighbours and keep the closest; equal distances go to the level of
    # smaller magnitude (the positive one when magnitudes are equal).
    for off in (-1, 0, 1, 2):
        idx = np.clip(base + off, 0, n - 1)
        cand = levels[idx]
        d = np.abs(v - cand)
        better = (d < best_dist) | (
            (d == best_dist)
            & ((np.abs(cand) < np.abs(best)) | ((np.abs(cand) == np.abs(best)) & (cand > best)))
        )
        best = np.where(better, cand, best)
        best_dist = np.where(better, d, best_dist)
    return best


def qam_activate(x, c: Constellation) -> np.ndarray:
    """Snap the real and imaginary parts independently to the nearest level."""
    x = np.asarray(x, dtype=DTYPE)
    lv = c.axis_levels()
    return (_snap_axis(x.real, lv, c.delta) + 1j * _snap_axis(x.imag, lv, c.delta)).astype(DTYPE)


def qam_backward(x_pre, g_out, c: Constellation) -> np.ndarray:
    """Straight-through gate: pass each axis where the input lay inside ``[-delta, delta]``."""
    x_pre = np.asarray(x_pre, dtype=DTYPE)
    g_out = np.asarray(g_out, dtype=DTYPE)
    if x_pre.shape != g_out.shape:
        raise ValueError(f"shape mismatch {x_pre.shape} vs {g_out.shape}")
    re_ok = np.abs(x_pre.real) <= c.delta_r
    im_ok = np.abs(x_pre.imag) <= c.delta_i
    return np.where(re_ok, g_out.real, 0.0) + 1j * np.where(im_ok, g_out.imag, 0.0)


def crelu(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    return np.maximum(x.real, 0.0) + 1j * np.maximum(x.imag, 0.0)


def crelu_backward(x, g_out) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    g_out = np.asarray(g_out, dtype=DTYPE)
    return np.where(x.real > 0, g_out.real, 0.0) + 1j * np.where(x.imag > 0, g_out.imag, 0.0)


# --- layers ------------------------------------------------------------------


class Layer:
    """Base layer. ``params``/``grads`` map names to arrays updated in place."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> list["Layer"]:
        return []


class CReLU(Layer):
    kind = "crelu"

    def forward(self, x, training):
        self._x = x
        return crelu(x)

    def backward(self, g):
        return crelu_backward(self._x, g)


class QamActivation(Layer):
    kind = "qam-activation"

    def __init__(self, constellation: Constellation):
        super().__init__()
        self.constellation = constellation

    def forward(self, x, training):
        self._x = x
        return qam_activate(x, self.constellation)

    def backward(self, g):
        return qam_backward(self._x, g, self.constellation)


class BatchNorm(Layer):
    """Per-component batch normalization.

    Real and imaginary parts are normalized separately. ``gamma`` and ``beta``
    are complex: their real parts act on the real component and their
    imaginary parts on the imaginary component. Statistics are taken over every
    axis except the feature axis (axis 1).
    """

    kind = "batchnorm"

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.params = {
            "gamma": np.full(num_features, 1.0 + 1.0j, dtype=DTYPE),
            "beta": np.zeros(num_features, dtype=DTYPE),
        }
        self.running_mean = np.zeros(num_features, dtype=DTYPE)
        self.running_var = np.full(num_features, 1.0 + 1.0j, dtype=DTYPE)

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    def _shape(self, x, v):
        return v.reshape((1, -1) + (1,) * (x.ndim - 2))

    def forward(self, x, training):
        axes = self._axes(x)
        if training:
            count = x.size // x.shape[1]
            if count < 2:
                raise ValueError("batch normalization in training mode needs at least 2 samples")
            mean = x.real.mean(axis=axes) + 1j * x.imag.mean(axis=axes)
            var = x.real.var(axis=axes) + 1j * x.imag.var(axis=axes)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_r = 1.0 / np.sqrt(var.real + self.eps)
        inv_i = 1.0 / np.sqrt(var.imag + self.eps)
        xr = (x.real - self._shape(x, mean.real)) * self._shape(x, inv_r)
        xi = (x.imag - self._shape(x, mean.imag)) * self._shape(x, inv_i)
        self._cache = (xr, xi, inv_r, inv_i, axes, training)
        gamma, beta = self.params["gamma"], self.params["beta"]
        yr = self._shape(x, gamma.real) * xr + self._shape(x, beta.real)
        yi = self._shape(x, gamma.imag) * xi + self._shape(x, beta.imag)
        return yr + 1j * yi

    def normalized(self) -> np.ndarray:
        """The normalized input of the last forward call, before scale and shift."""
        xr, xi = self._cache[:2]
        return xr + 1j * xi

    def backward(self, g):
        xr, xi, inv_r, inv_i, axes, training = self._cache
        gamma = self.params["gamma"]
        self.grads = {
            "gamma": (g.real * xr).sum(axis=axes) + 1j * (g.imag * xi).sum(axis=axes),
            "beta": g.real.sum(axis=axes) + 1j * g.imag.sum(axis=axes),
        }
        dr = g.real * self._shape(g, gamma.real)
        di = g.imag * self._shape(g, gamma.imag)
        if not training:
            return dr * self._shape(g, inv_r) + 1j * di * self._shape(g, inv_i)
        n = g.size // g.shape[1]

        def through(d, xhat, inv):
            s1 = d.sum(axis=axes, keepdims=True)
            s2 = (d * xhat).sum(axis=axes, keepdims=True)
            return self._shape(g, inv) * (d - s1 / n - xhat * s2 / n)

        return through(dr, xr, inv_r) + 1j * through(di, xi, inv_i)


class Linear(Layer):
    """Local complex dense layer ``y = W x + b`` on ``B x F`` input."""

    kind = "linear"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        super().__init__()
        var = 0.0 if zero else 1.0 / n_in
        self.params = {
            "weight": random_complex_gaussian(n_out, n_in, var, rng),
            "bias": np.zeros(n_out, dtype=DTYPE),
        }

    def forward(self, x, training):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, g):
        self.grads = {"weight": g.T @ self._x.conj(), "bias": g.sum(axis=0)}
        return g @ self.params["weight"].conj()


class Conv(Layer):
    """Local complex convolution computed as a matrix product on im2col columns."""

    kind = "conv"

    def __init__(self, c_in, c_out, kernel, padding, stride, rng, zero: bool = False):
        super().__init__()
        self.kernel, self.padding, self.stride = kernel, padding, stride
        n_i = c_in * kernel * kernel
        var = 0.0 if zero else 1.0 / n_i
        self.params = {
            "weight": random_complex_gaussian(c_out, n_i, var, rng),
            "bias": np.zeros(c_out, dtype=DTYPE),
        }

    def forward(self, x, training):
        self._shape_in = x.shape
        self._cols = oac.conv_rearrange_batch(x, self.kernel, self.padding, self.stride)
        out = self.params["weight"] @ self._cols + self.params["bias"][:, None]
        self._out_hw = oac.conv_output_size(x.shape[2], x.shape[3], self.kernel, self.padding, self.stride)
        return oac.conv_reassemble(out, x.shape[0], *self._out_hw)

    def backward(self, g):
        g_cols = g.transpose(1, 0, 2, 3).reshape(g.shape[1], -1)
        self.grads = {"weight": g_cols @ self._cols.conj().T, "bias": g_cols.sum(axis=1)}
        back = self.params["weight"].conj().T @ g_cols
        return oac.conv_rearrange_adjoint(back, self._shape_in, self.kernel, self.padding, self.stride)


class _OacBase(Layer):
    """Shared plumbing for layers whose matrix product runs over a channel.

    During training the receiver accumulates the received-signal covariance of
    the batch and the transmitter the covariance of the gradients that came
    back; both feed the subspace penalties when their weights are non-zero.
    """

    def __init__(self, core: oac.OacLinearLayer, channel: ChannelState,
                 rng: np.random.Generator, weight_f: float = 1.0, weight_b: float = 1.0):
        super().__init__()
        self.core = core
        self.channel = channel
        self.rng = rng
        self.weight_f = weight_f
        self.weight_b = weight_b
        self.params = core.params()
        self.loss_f = 0.0
        self.loss_b = 0.0
        self.acc_f = CovarianceAccumulator(core.n_r)
        self.acc_b = CovarianceAccumulator(core.n_t)
        self.use_ota = True

    def _forward_cols(self, cols, training):
        y, trace = oac.forward(self.core, self.channel, cols, self.rng)
        self._trace = trace
        self._training = training
        if training and self.weight_f:
            self.acc_f.reset()
            for yr in trace.y_r:
                self.acc_f.accumulate(yr)
        return y

    def _backward_cols(self, g_cols):
        core, trace = self.core, self._trace
        if self.use_ota:
            bt = oac.backward_ota(core, self.channel, trace, g_cols, self.rng)
        else:
            bt = oac.backward_ideal(core, self.channel, trace, g_cols)
        g_c, g_xt = bt.g_c, bt.g_xt
        g_p, g_w, g_x = bt.g_p, bt.g_w_tilde, bt.g_x
        self.loss_f = self.loss_b = 0.0
        if self._training and self.weight_f:
            self.loss_f, gf = forward_subspace_loss(core.c, self.acc_f, core.r)
            g_c = g_c + self.weight_f * gf
        if self._training and self.weight_b:
            self.acc_b.reset()
            for g in g_xt:
                self.acc_b.accumulate(g)
            self.loss_b, gb = backward_subspace_loss(self.acc_b, trace.x_t, core.r)
            g_p, g_w, g_x = oac.transmitter_grads(core, trace, g_xt + self.weight_b * gb)
        self.grads = {"p": g_p, "w_tilde": g_w, "c": g_c, "bias": bt.g_b}
        return g_x


class OacDense(_OacBase):
    kind = "oac-linear"

    def forward(self, x, training):
        return self._forward_cols(x.T, training).T

    def backward(self, g):
        return self._backward_cols(g.T).T


class OacConv(_OacBase):
    """Convolution whose per-location products travel over the channel.

    Each output location of each sample is one transmission whose input is
    the flattened receptive field (``C_in*kh*kw`` values).
    """

    kind = "oac-conv"

    def __init__(self, core, channel, rng, kernel, padding, stride, **kw):
        super().__init__(core, channel, rng, **kw)
        self.kernel, self.padding, self.stride = kernel, padding, stride

    def forward(self, x, training):
        self._shape_in = x.shape
        cols = oac.conv_rearrange_batch(x, self.kernel, self.padding, self.stride)
        out = self._forward_cols(cols, training)
        out_h, out_w = oac.conv_output_size(x.shape[2], x.shape[3], self.kernel, self.padding, self.stride)
        return oac.conv_reassemble(out, x.shape[0], out_h, out_w)

    def backward(self, g):
        g_cols = g.transpose(1, 0, 2, 3).reshape(g.shape[1], -1)
        back = self._backward_cols(g_cols)
        return oac.conv_rearrange_adjoint(back, self._shape_in, self.kernel, self.padding, self.stride)


class Residual(Layer):
    kind = "residual-block"

    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def children(self):
        return self.layers

    def forward(self, x, training):
        h = x
        for layer in self.layers:
            h = layer.forward(h, training)
        return x + h

    def backward(self, g):
        h = g
        for layer in reversed(self.layers):
            h = layer.backward(h)
        return g + h


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training):
        self._shape_in = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape_in)


class AvgPool(Layer):
    """Global average over the spatial axes: ``B x C x H x W`` to ``B x C``."""

    kind = "avgpool"

    def forward(self, x, training):
        self._shape_in = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, g):
        b, c, h, w = self._shape_in
        return np.broadcast_to(g[:, :, None, None] / (h * w), self._shape_in).copy()


# --- loss and optimizer ------------------------------------------------------


def head_loss(z, labels) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy on the real parts of ``z`` (``B x classes``).

    Returns the mean loss and its gradient, which is purely real.
    """
    z = np.asarray(z, dtype=DTYPE)
    labels = np.asarray(labels)
    b, classes = z.shape
    if labels.shape != (b,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"labels must be {b} indices in [0, {classes})")
    logits = z.real
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_prob = shifted - log_norm[:, None]
    loss = float(-log_prob[np.arange(b), labels].mean())
    grad = np.exp(log_prob)
    grad[np.arange(b), labels] -= 1.0
    return loss, (grad / b).astype(DTYPE)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class Adam:
    """Adam treating real and imaginary parts as separate real parameters."""

    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if params[name].shape != np.shape(g):
                raise ValueError(f"gradient for {name} has shape {np.shape(g)}, expected {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}; step skipped")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            p = params[name]
            pr = p.view(np.float64)
            gr = np.ascontiguousarray(g, dtype=DTYPE).view(np.float64)
            if name not in self.m:
                self.m[name] = np.zeros_like(pr)
                self.v[name] = np.zeros_like(pr)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * gr
            v *= self.beta2
            v += (1.0 - self.beta2) * gr * gr
            pr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam, lr: float | None = None) -> Adam:
    if lr is not None:
        state.lr = lr
    state.step(params, grads)
    return state


# --- model specification -----------------------------------------------------


class SpecError(ValueError):
    """A model specification whose layer shapes do not chain."""


WEIGHT_KINDS = {"linear", "conv", "oac-linear", "oac-conv", "dense-head"}
ACTIVATION_KINDS = {"crelu", "qam-activation", "activation"}
ALL_KINDS = WEIGHT_KINDS | ACTIVATION_KINDS | {"batchnorm", "residual-block", "flatten", "avgpool"}
_CONV_KEYS = {"type", "out", "kernel", "padding", "stride"}
ALLOWED_KEYS = {
    "linear": {"type", "out"},
    "oac-linear": {"type", "out"},
    "dense-head": {"type", "out"},
    "conv": _CONV_KEYS,
    "oac-conv": _CONV_KEYS,
    "qam-activation": {"type", "levels", "delta"},
    "residual-block": {"type", "layers"},
}


@dataclass
class ModelSpec:
    """Ordered layer descriptors plus split points.

    Each descriptor is a dict with a ``type`` key. ``splits`` lists 1-based
    ordinals of weight layers (linear/conv kinds, counted depth first) that
    run over a MIMO channel; ``oac-linear``/``oac-conv`` descriptors always do.
    An ``activation`` descriptor is resolved at build time to CReLU or QAM.
    """

    layers: list[dict]
    splits: list[int] = field(default_factory=list)


def _walk(layers, prefix="model.layers"):
    for i, d in enumerate(layers):
        path = f"{prefix}[{i}]"
        yield path, d
        if d.get("type") == "residual-block":
            yield from _walk(d.get("layers", []), f"{path}.layers")


def weight_layer_count(spec: ModelSpec) -> int:
    return sum(1 for _, d in _walk(spec.layers) if d.get("type") in WEIGHT_KINDS)


def infer_shapes(spec: ModelSpec, input_shape: tuple[int, ...], class_count: int) -> list[tuple]:
    """Propagate per-sample shapes through the spec; raise ``SpecError`` on a break."""
    n_weight = weight_layer_count(spec)
    for s in spec.splits:
        if not 1 <= s <= n_weight:
            raise SpecError(f"model.splits: split {s} outside weight layers 1..{n_weight}")
    if not spec.layers:
        raise SpecError("model.layers: empty model")
    last = spec.layers[-1]
    if last.get("type") != "dense-head":
        raise SpecError(f"model.layers[{len(spec.layers) - 1}]: model must end with a dense-head")
    if last.get("out") != class_count:
        raise SpecError(
            f"model.layers[{len(spec.layers) - 1}].out: head width {last.get('out')} != {class_count} classes"
        )

    def run(layers, shape, prefix):
        shapes = []
        for i, d in enumerate(layers):
            path = f"{prefix}[{i}]"
            kind = d.get("type")
            if kind not in ALL_KINDS:
                raise SpecError(f"{path}.type: unknown layer type {kind!r}")
            extra = set(d) - ALLOWED_KEYS.get(kind, {"type"})
            if extra:
                raise SpecError(f"{path}.{sorted(extra)[0]}: unknown field for {kind}")
            if kind in {"linear", "oac-linear", "dense-head"}:
                if len(shape) != 1:
                    raise SpecError(f"{path}: {kind} needs flat input, got shape {shape}")
                out = d.get("out")
                if not isinstance(out, int) or out < 1:
                    raise SpecError(f"{path}.out: must be a positive integer")
                shape = (out,)
            elif kind in {"conv", "oac-conv"}:
                if len(shape) != 3:
                    raise SpecError(f"{path}: {kind} needs C x H x W input, got shape {shape}")
                out = d.get("out")
                if not isinstance(out, int) or out < 1:
                    raise SpecError(f"{path}.out: must be a positive integer")
                try:
                    h, w = oac.conv_output_size(
                        shape[1], shape[2], d.get("kernel", 3), d.get("padding", 0), d.get("stride", 1)
                    )
                except ValueError as e:
                    raise SpecError(f"{path}: {e}") from None
                shape = (out, h, w)
            elif kind == "flatten":
                shape = (math.prod(shape),)
            elif kind == "avgpool":
                if len(shape) != 3:
                    raise SpecError(f"{path}: avgpool needs C x H x W input")
                shape = (shape[0],)
            elif kind == "residual-block":
                inner = run(d.get("layers", []), shape, f"{path}.layers")
                if inner and inner[-1] != shape:
                    raise SpecError(f"{path}: residual branch maps {shape} to {inner[-1]}")
            shapes.append(shape)
        return shapes

    return run(spec.layers, tuple(input_shape), "model.layers")


@dataclass
class BuildContext:
    """What the builder needs beyond the spec itself.

    ``init_rng(ordinal)`` gives the initialization stream of a weight layer;
    ``make_link(ordinal)`` gives the channel state and noise stream of an OAC
    layer. Ordinals are the 1-based weight-layer counts.
    """

    init_rng: Callable[[int], np.random.Generator]
    make_link: Callable[[int], tuple[ChannelState, np.random.Generator]] | None = None
    rank: int = 4
    constellation: Constellation | None = None  # None selects CReLU
    weight_f: float = 1.0
    weight_b: float = 1.0
    zero_init: bool = False


class Model:
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def all_layers(self):
        stack = list(reversed(self.layers))
        while stack:
            layer = stack.pop()
            yield layer
            stack.extend(reversed(layer.children()))

    def oac_layers(self) -> list[_OacBase]:
        return [l for l in self.all_layers() if isinstance(l, _OacBase)]

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.all_layers()):
            for name, p in layer.params.items():
                out[f"{i}.{layer.kind}.{name}"] = p
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.all_layers()):
            for name, g in layer.grads.items():
                out[f"{i}.{layer.kind}.{name}"] = g
        return out

    def forward(self, x, training: bool = True) -> np.ndarray:
        h = np.asarray(x, dtype=DTYPE)
        for layer in self.layers:
            h = layer.forward(h, training)
        return h

    def backward(self, g) -> np.ndarray:
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def subspace_losses(self) -> tuple[float, float]:
        oacs = self.oac_layers()
        return sum(l.loss_f for l in oacs), sum(l.loss_b for l in oacs)


def build_model(spec: ModelSpec, input_shape, class_count: int, ctx: BuildContext) -> Model:
    """Validate ``spec`` and instantiate its layers."""
    infer_shapes(spec, tuple(input_shape), class_count)
    splits = set(spec.splits)
    counter = [0]

    def make(layers, shape):
        built = []
        for d in layers:
            kind = d["type"]
            if kind in WEIGHT_KINDS:
                counter[0] += 1
                ordinal = counter[0]
                over_air = kind.startswith("oac-") or (ordinal in splits and kind != "dense-head")
                rng = ctx.init_rng(ordinal)
                if kind in {"linear", "oac-linear", "dense-head"}:
                    n_in, n_out = shape[0], d["out"]
                    if over_air:
                        layer = _make_oac(ctx, ordinal, n_in, n_out, rng)
                    else:
                        layer = Linear(n_in, n_out, rng, zero=ctx.zero_init)
                    shape = (n_out,)
                else:
                    k, pad, st = d.get("kernel", 3), d.get("padding", 0), d.get("stride", 1)
                    c_in = shape[0]
                    if over_air:
                        core, link, noise = _make_core(ctx, ordinal, c_in * k * k, d["out"], rng)
                        layer = OacConv(core, link, noise, k, pad, st,
                                        weight_f=ctx.weight_f, weight_b=ctx.weight_b)
                    else:
                        layer = Conv(c_in, d["out"], k, pad, st, rng, zero=ctx.zero_init)
                    shape = (d["out"],) + oac.conv_output_size(shape[1], shape[2], k, pad, st)
            elif kind in ACTIVATION_KINDS:
                if kind == "crelu" or (kind == "activation" and ctx.constellation is None):
                    layer = CReLU()
                else:
                    c = ctx.constellation or Constellation()
                    if kind == "qam-activation" and ("levels" in d or "delta" in d):
                        c = Constellation(d.get("levels", c.levels), d.get("delta", c.delta))
                    layer = QamActivation(c)
            elif kind == "batchnorm":
                layer = BatchNorm(shape[0])
                if ctx.zero_init:
                    layer.params["gamma"][:] = 0.0
            elif kind == "residual-block":
                layer = Residual(make(d.get("layers", []), shape))
            elif kind == "flatten":
                layer = Flatten()
                shape = (math.prod(shape),)
            else:
                layer = AvgPool()
                shape = (shape[0],)
            built.append(layer)
        return built

    return Model(make(spec.layers, tuple(input_shape)))


def _make_core(ctx: BuildContext, ordinal, n_i, n_o, rng):
    if ctx.make_link is None:
        raise SpecError("model has over-the-air layers but no channel was provided")
    link, noise_rng = ctx.make_link(ordinal)
    core = oac.init_layer(n_i, n_o, link.n_t, link.n_r, ctx.rank, rng)
    if ctx.zero_init:
        core.w_tilde[:] = 0.0
    return core, link, noise_rng


def _make_oac(ctx: BuildContext, ordinal, n_in, n_out, rng) -> OacDense:
    core, link, noise_rng = _make_core(ctx, ordinal, n_in, n_out, rng)
    return OacDense(core, link, noise_rng, weight_f=ctx.weight_f, weight_b=ctx.weight_b)
