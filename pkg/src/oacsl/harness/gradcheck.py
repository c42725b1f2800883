"""Numerical gradient checks for the over-the-air layers and the full model.

Three suites run on noiseless links:

* ``ota-vs-ideal``: random layers, the reciprocal-channel backward pass
  against the reference that reads ``H`` directly (max componentwise error).
* ``fd-layer``: one OAC layer followed by CReLU and a quadratic loss, every
  parameter group and the input against central differences.
* ``fd-model``: the configured model with its subspace penalties switched
  off, every parameter tensor and the input against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import oac
from ..channel import PathParams, gen_channel
from ..clinalg import random_complex_gaussian
from ..nn import BuildContext, Constellation, build_model, crelu, crelu_backward, head_loss
from .config import ExperimentConfig

OTA_TOL = 1e-9
FD_TOL = 1e-4
MAX_DIM = 16
MAX_MODEL_PARAMS = 20_000
GROUPS = ("x", "p", "w_tilde", "c", "bias")


@dataclass
class CheckRow:
    suite: str
    group: str
    max_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tol)


@dataclass
class GradcheckReport:
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def worst(self, suite: str) -> float:
        return max(r.max_error for r in self.rows if r.suite == suite)

    def format(self) -> str:
        lines = [f"{'suite':<14}{'group':<26}{'max_error':>12}{'tol':>10}  status"]
        for r in self.rows:
            status = "ok" if r.passed else "FAIL"
            lines.append(f"{r.suite:<14}{r.group:<26}{r.max_error:>12.3e}{r.tol:>10.0e}  {status}")
        return "\n".join(lines)


def central_differences(loss, z: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """``dL/dRe + j dL/dIm`` for each entry of ``z`` (perturbed in place)."""
    g = np.zeros_like(z)
    flat, gflat = z.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        base = flat[i]
        flat[i] = base + step
        up = loss()
        flat[i] = base - step
        down = loss()
        flat[i] = base + 1j * step
        up_i = loss()
        flat[i] = base - 1j * step
        down_i = loss()
        flat[i] = base
        gflat[i] = (up - down) / (2 * step) + 1j * (up_i - down_i) / (2 * step)
    return g


def _rel(a, b, floor: float = 1e-4) -> float:
    # the floor keeps exactly-zero gradients (a bias feeding batch norm) from
    # dividing round-off by round-off
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def _flip(grads: dict, corrupt: str | None) -> dict:
    if corrupt is None:
        return grads
    return {k: (-v if k == corrupt or k.endswith("." + corrupt) else v) for k, v in grads.items()}


def _link(cfg: ExperimentConfig, seed_parts):
    state = gen_channel(PathParams(n_paths=cfg.mimo.n_paths), cfg.mimo.n_t, cfg.mimo.n_r,
                        np.random.default_rng([*seed_parts, 0]), rank=cfg.mimo.r)
    return state, np.random.default_rng([*seed_parts, 1])


def check_ota_vs_ideal(cfg: ExperimentConfig, instances: int, corrupt=None) -> list[CheckRow]:
    m = cfg.mimo
    worst = dict.fromkeys(GROUPS, 0.0)
    for i in range(instances):
        rng = np.random.default_rng([cfg.seed, 100, i])
        layer = oac.init_layer(m.n_t, m.n_t, m.n_t, m.n_r, m.r, rng)
        layer.bias[:] = random_complex_gaussian(m.n_t, 1, 1.0, rng).ravel()
        channel, noise = _link(cfg, (cfg.seed, 101, i))
        x = random_complex_gaussian(m.n_t, 3, 1.0, rng)
        _, trace = oac.forward(layer, channel, x, noise)
        g_y = random_complex_gaussian(m.n_t, 3, 1.0, rng)
        ideal = oac.backward_ideal(layer, channel, trace, g_y)
        ota = oac.backward_ota(layer, channel, trace, g_y, noise)
        got = _flip({"x": ota.g_x, **ota.as_dict()}, corrupt)
        want = {"x": ideal.g_x, **ideal.as_dict()}
        for k in GROUPS:
            worst[k] = max(worst[k], float(np.max(np.abs(got[k] - want[k]))))
    return [CheckRow("ota-vs-ideal", k, worst[k], OTA_TOL) for k in GROUPS]


def check_layer_fd(cfg: ExperimentConfig, corrupt=None) -> list[CheckRow]:
    m = cfg.mimo
    rng = np.random.default_rng([cfg.seed, 200])
    layer = oac.init_layer(m.n_t, m.n_t, m.n_t, m.n_r, m.r, rng)
    layer.bias[:] = random_complex_gaussian(m.n_t, 1, 0.1, rng).ravel()
    channel, noise = _link(cfg, (cfg.seed, 201))
    x = random_complex_gaussian(m.n_t, 4, 1.0, rng)
    target = random_complex_gaussian(m.n_t, 4, 1.0, rng)

    def loss():
        y, _ = oac.forward(layer, channel, x, noise)
        return 0.5 * float(np.sum(np.abs(crelu(y) - target) ** 2))

    pre, trace = oac.forward(layer, channel, x, noise)
    g_y = crelu_backward(pre, crelu(pre) - target)
    bt = oac.backward_ota(layer, channel, trace, g_y, noise)
    got = _flip({"x": bt.g_x, **bt.as_dict()}, corrupt)
    tensors = {"x": x, **layer.params()}
    return [CheckRow("fd-layer", k, _rel(got[k], central_differences(loss, tensors[k])), FD_TOL) for k in GROUPS]


def check_model_fd(cfg: ExperimentConfig, corrupt=None) -> list[CheckRow]:
    seed = cfg.seed

    def make_link(o):
        return _link(cfg, (seed, 300, o))

    act = cfg.activation
    ctx = BuildContext(
        init_rng=lambda o: np.random.default_rng([seed, 301, o]),
        make_link=make_link,
        rank=cfg.mimo.r,
        constellation=Constellation(act.levels, act.delta) if act.kind == "qam" else None,
        weight_f=0.0,
        weight_b=0.0,
    )
    classes = cfg.data.class_count()
    model = build_model(cfg.model.spec(), cfg.data.input_shape(), classes, ctx)
    params = model.named_params()
    if sum(p.size for p in params.values()) > MAX_MODEL_PARAMS:
        raise ValueError(f"model has more than {MAX_MODEL_PARAMS} parameters; too large to difference")
    rng = np.random.default_rng([seed, 302])
    # zero biases leave exact zeros on CReLU kinks, where differences are one-sided
    for name, p in params.items():
        if name.endswith("bias") or name.endswith("beta"):
            p[:] = random_complex_gaussian(p.size, 1, 0.1, rng).reshape(p.shape)
    batch = 4
    x = random_complex_gaussian(batch * int(np.prod(cfg.data.input_shape())), 1, 1.0, rng)
    x = x.reshape(batch, *cfg.data.input_shape())
    labels = np.arange(batch) % classes

    def loss():
        return head_loss(model.forward(x, training=True), labels)[0]

    _, g = head_loss(model.forward(x, training=True), labels)
    g_x = model.backward(g)
    got = _flip({"x": g_x, **model.named_grads()}, corrupt)
    tensors = {"x": x, **params}
    return [CheckRow("fd-model", k, _rel(got[k], central_differences(loss, tensors[k], 1e-5)), FD_TOL)
            for k in tensors]


def run_gradcheck(cfg: ExperimentConfig, corrupt: str | None = None, instances: int = 20) -> GradcheckReport:
    """Run all suites; ``corrupt`` flips the sign of one gradient group as a self-test.

    Raises:
        ValueError: the link is larger than 16 antennas per side, or
            ``corrupt`` names no known group.
    """
    m = cfg.mimo
    if max(m.n_t, m.n_r) > MAX_DIM:
        raise ValueError(f"gradcheck needs at most {MAX_DIM} antennas per side, got {m.n_r}x{m.n_t}")
    if corrupt is not None and corrupt not in GROUPS:
        raise ValueError(f"unknown gradient group {corrupt!r}; choose from {', '.join(GROUPS)}")
    report = GradcheckReport()
    report.rows += check_ota_vs_ideal(cfg, instances, corrupt)
    report.rows += check_layer_fd(cfg, corrupt)
    report.rows += check_model_fd(cfg, corrupt)
    return report
