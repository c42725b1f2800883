"""A fully connected layer computed by the MIMO channel itself.

One forward pass runs ``K = ceil(N_o / r)`` channel rounds. In round ``k`` the
transmitter precodes the input with ``P @ W_k``, the channel applies ``H``
(plus noise), and the receiver combines with ``C^H``; stacking the ``K``
r-dimensional outputs gives the layer output. The backward pass sends the
conjugated, combiner-weighted output gradient back over ``H^T``; conjugating
what arrives at the transmitter yields ``H^H C g_y`` without ever reading ``H``.

Gradient convention: for a real loss ``L`` and complex ``z``, the gradient is
``dL/dRe(z) + 1j * dL/dIm(z)``. For ``y = A x`` this gives ``g_x = A^H g_y``
and ``g_A = g_y x^H``.

Signals are stored column-wise: an input batch is ``N_i x B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelState, transmit_backward, transmit_forward
from .clinalg import DTYPE, ShapeError, as_matrix, random_complex_gaussian

__all__ = [
    "OacLinearLayer",
    "ForwardTrace",
    "BackwardTrace",
    "init_layer",
    "forward",
    "backward_ideal",
    "backward_ota",
    "transmitter_grads",
    "conv_rearrange",
    "conv_rearrange_batch",
    "conv_rearrange_adjoint",
    "conv_reassemble",
    "conv_output_size",
]


@dataclass
class OacLinearLayer:
    """Trainable precoder ``P``, per-round weights ``W_k``, combiner ``C``, bias.

    ``w_tilde`` has shape ``(K, r, N_i)``. Outputs of the last round beyond
    ``N_o`` are dropped.
    """

    n_i: int
    n_o: int
    r: int
    p: np.ndarray
    w_tilde: np.ndarray
    c: np.ndarray
    bias: np.ndarray

    @property
    def k_rounds(self) -> int:
        return math.ceil(self.n_o / self.r)

    @property
    def n_t(self) -> int:
        return self.p.shape[0]

    @property
    def n_r(self) -> int:
        return self.c.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"p": self.p, "w_tilde": self.w_tilde, "c": self.c, "bias": self.bias}

    def effective_weight(self, h: np.ndarray) -> np.ndarray:
        """The ``N_o x N_i`` matrix the layer realizes over channel ``h``."""
        rows = [self.c.conj().T @ h @ self.p @ w for w in self.w_tilde]
        return np.vstack(rows)[: self.n_o]


@dataclass
class ForwardTrace:
    x: np.ndarray  # N_i x B
    x_t: np.ndarray  # K x N_t x B
    y_r: np.ndarray  # K x N_r x B
    y: np.ndarray  # N_o x B, bias included


@dataclass
class BackwardTrace:
    g_x: np.ndarray
    g_p: np.ndarray
    g_w_tilde: np.ndarray
    g_c: np.ndarray
    g_b: np.ndarray
    g_xt: np.ndarray  # K x N_t x B

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"p": self.g_p, "w_tilde": self.g_w_tilde, "c": self.g_c, "bias": self.g_b}


def init_layer(
    n_i: int, n_o: int, n_t: int, n_r: int, r: int, rng: np.random.Generator
) -> OacLinearLayer:
    """Complex Glorot-style init: entries of each matrix have variance 1/fan_in."""
    if min(n_i, n_o, n_t, n_r, r) < 1:
        raise ValueError("all layer dimensions must be positive")
    if r > min(n_t, n_r):
        raise ValueError(f"r={r} streams cannot be carried by a {n_r}x{n_t} channel")
    k = math.ceil(n_o / r)
    p = random_complex_gaussian(n_t, r, 1.0 / r, rng)
    w = np.stack([random_complex_gaussian(r, n_i, 1.0 / n_i, rng) for _ in range(k)])
    c = random_complex_gaussian(n_r, r, 1.0 / n_r, rng)
    bias = np.zeros(n_o, dtype=DTYPE)
    return OacLinearLayer(n_i=n_i, n_o=n_o, r=r, p=p, w_tilde=w, c=c, bias=bias)


def _check_channel(layer: OacLinearLayer, channel: ChannelState) -> None:
    if channel.n_t != layer.n_t or channel.n_r != layer.n_r:
        raise ShapeError(
            f"layer expects a {layer.n_r}x{layer.n_t} channel, got {channel.n_r}x{channel.n_t}"
        )


def forward(
    layer: OacLinearLayer, channel: ChannelState, x, rng: np.random.Generator
) -> tuple[np.ndarray, ForwardTrace]:
    x = as_matrix(x)
    if x.shape[0] != layer.n_i:
        raise ShapeError(f"layer input width is {layer.n_i}, got {x.shape[0]}")
    _check_channel(layer, channel)
    x_t, y_r, outs = [], [], []
    for w in layer.w_tilde:
        xt = layer.p @ (w @ x)
        yr = transmit_forward(channel, xt, rng)
        x_t.append(xt)
        y_r.append(yr)
        outs.append(layer.c.conj().T @ yr)
    y = np.vstack(outs)[: layer.n_o] + layer.bias[:, None]
    trace = ForwardTrace(x=x, x_t=np.stack(x_t), y_r=np.stack(y_r), y=y)
    return y, trace


def _split_output_grad(layer: OacLinearLayer, trace: ForwardTrace, g_y) -> np.ndarray:
    g_y = as_matrix(g_y)
    batch = trace.x.shape[1]
    if trace.x.shape[0] != layer.n_i or trace.x_t.shape != (layer.k_rounds, layer.n_t, batch):
        raise ShapeError("forward trace does not belong to this layer")
    if g_y.shape != (layer.n_o, batch):
        raise ShapeError(f"output gradient must be {layer.n_o}x{batch}, got {g_y.shape}")
    padded = np.zeros((layer.k_rounds * layer.r, batch), dtype=DTYPE)
    padded[: layer.n_o] = g_y
    return padded.reshape(layer.k_rounds, layer.r, batch)


def transmitter_grads(layer: OacLinearLayer, trace: ForwardTrace, g_xt: np.ndarray):
    """Gradients of ``P``, every ``W_k`` and the input, given ``g_{x_t,k}``.

    Everything here is available at the transmitter: its own parameters, its
    own input and the per-round transmit-signal gradients it received.
    """
    x = trace.x
    g_p = np.zeros_like(layer.p)
    g_w = np.empty_like(layer.w_tilde)
    g_x = np.zeros_like(x)
    for k, w in enumerate(layer.w_tilde):
        wx = w @ x
        g_p += g_xt[k] @ wx.conj().T
        ph_g = layer.p.conj().T @ g_xt[k]
        g_w[k] = ph_g @ x.conj().T
        g_x += w.conj().T @ ph_g
    return g_p, g_w, g_x


def _receiver_grads(trace: ForwardTrace, g_yk: np.ndarray, g_y: np.ndarray):
    g_c = sum(trace.y_r[k] @ g_yk[k].conj().T for k in range(g_yk.shape[0]))
    g_b = as_matrix(g_y).sum(axis=1)
    return g_c, g_b


def backward_ideal(
    layer: OacLinearLayer, channel: ChannelState, trace: ForwardTrace, g_y
) -> BackwardTrace:
    """Reference backward pass that reads ``H`` directly. For checking only."""
    _check_channel(layer, channel)
    g_yk = _split_output_grad(layer, trace, g_y)
    h_adj = channel.h.conj().T
    g_xt = np.stack([h_adj @ (layer.c @ g) for g in g_yk])
    g_p, g_w, g_x = transmitter_grads(layer, trace, g_xt)
    g_c, g_b = _receiver_grads(trace, g_yk, g_y)
    return BackwardTrace(g_x=g_x, g_p=g_p, g_w_tilde=g_w, g_c=g_c, g_b=g_b, g_xt=g_xt)


def backward_ota(
    layer: OacLinearLayer,
    channel: ChannelState,
    trace: ForwardTrace,
    g_y,
    rng: np.random.Generator,
) -> BackwardTrace:
    """Backward pass over the reciprocal channel.

    For each round the receiver transmits ``conj(C g_{y_k})`` over ``H^T``;
    the transmitter conjugates what it receives to get ``H^H C g_{y_k}`` plus
    noise. ``C`` and the bias get their gradients locally at the receiver.
    """
    _check_channel(layer, channel)
    g_yk = _split_output_grad(layer, trace, g_y)
    g_xt = np.stack(
        [transmit_backward(channel, (layer.c @ g).conj(), rng).conj() for g in g_yk]
    )
    g_p, g_w, g_x = transmitter_grads(layer, trace, g_xt)
    g_c, g_b = _receiver_grads(trace, g_yk, g_y)
    return BackwardTrace(g_x=g_x, g_p=g_p, g_w_tilde=g_w, g_c=g_c, g_b=g_b, g_xt=g_xt)


# --- convolution as a sequence of OAC transmissions -------------------------


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def conv_output_size(height: int, width: int, kernel, padding=0, stride=1) -> tuple[int, int]:
    kh, kw = _pair(kernel)
    ph, pw = _pair(padding)
    sh, sw = _pair(stride)
    if min(kh, kw, sh, sw) < 1 or min(ph, pw) < 0:
        raise ValueError("kernel and stride must be positive, padding non-negative")
    out_h = (height + 2 * ph - kh) // sh + 1
    out_w = (width + 2 * pw - kw) // sw + 1
    if height + 2 * ph < kh or width + 2 * pw < kw:
        raise ValueError(f"kernel {kh}x{kw} does not fit a padded {height}x{width} map")
    return out_h, out_w


def conv_rearrange_batch(maps: np.ndarray, kernel, padding=0, stride=1) -> np.ndarray:
    """im2col over a ``B x C x H x W`` batch.

    Returns ``C*kh*kw x (B*H'*W')``; column ``b*H'*W' + i*W' + j`` is the patch
    feeding output location ``(i, j)`` of sample ``b``, flattened channel-major
    then row then column.
    """
    maps = np.asarray(maps)
    if maps.ndim != 4:
        raise ValueError(f"expected a B x C x H x W batch, got shape {maps.shape}")
    b, ch, height, width = maps.shape
    kh, kw = _pair(kernel)
    ph, pw = _pair(padding)
    sh, sw = _pair(stride)
    out_h, out_w = conv_output_size(height, width, kernel, padding, stride)
    padded = np.pad(maps, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((b, ch, kh, kw, out_h, out_w), dtype=maps.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = padded[:, :, i : i + sh * out_h : sh, j : j + sw * out_w : sw]
    return cols.transpose(1, 2, 3, 0, 4, 5).reshape(ch * kh * kw, b * out_h * out_w)


def conv_rearrange(feature_map: np.ndarray, kernel, padding=0, stride=1) -> np.ndarray:
    """Columns of one ``C x H x W`` map, one per output location.

    With a 1x1 kernel each column collects the values at the same spatial
    location across all channels.
    """
    feature_map = np.asarray(feature_map)
    if feature_map.ndim != 3:
        raise ValueError(f"expected a C x H x W map, got shape {feature_map.shape}")
    return conv_rearrange_batch(feature_map[None], kernel, padding, stride)


def conv_rearrange_adjoint(
    cols: np.ndarray, shape: tuple[int, int, int, int], kernel, padding=0, stride=1
) -> np.ndarray:
    """Scatter-add columns back into a ``B x C x H x W`` batch (col2im)."""
    b, ch, height, width = shape
    kh, kw = _pair(kernel)
    ph, pw = _pair(padding)
    sh, sw = _pair(stride)
    out_h, out_w = conv_output_size(height, width, kernel, padding, stride)
    cols = cols.reshape(ch, kh, kw, b, out_h, out_w).transpose(3, 0, 1, 2, 4, 5)
    padded = np.zeros((b, ch, height + 2 * ph, width + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i : i + sh * out_h : sh, j : j + sw * out_w : sw] += cols[:, :, i, j]
    return padded[:, :, ph : ph + height, pw : pw + width]


def conv_reassemble(outputs: np.ndarray, batch: int, out_h: int, out_w: int) -> np.ndarray:
    """Inverse of the column layout: ``C_out x (B*H'*W')`` to ``B x C_out x H' x W'``."""
    c_out = outputs.shape[0]
    return outputs.reshape(c_out, batch, out_h, out_w).transpose(1, 0, 2, 3)
