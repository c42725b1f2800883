"""Training loop, sweeps and CSV metrics."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..beamform import total_loss
from ..channel import MobilityConfig, PathParams, evolve_channel, gen_channel
from ..data import BlobConfig, Dataset, batches, load_cifar10, synth_blobs
from ..nn import Adam, BuildContext, Constellation, Model, NonFiniteGradientError, build_model, head_loss
from .config import ExperimentConfig, with_updates

log = logging.getLogger(__name__)

# generator stream ids; each OAC layer / weight layer adds its ordinal
STREAM_INIT = 1
STREAM_CHANNEL = 2
STREAM_NOISE = 3
STREAM_MOBILITY = 4
STREAM_SHUFFLE = 5


def stream(seed: int, kind: int, ordinal: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, kind, ordinal])


@dataclass
class MetricsRow:
    epoch: int
    step: int
    loss_task: float
    loss_f: float
    loss_b: float
    loss_total: float
    train_acc: float
    test_acc: float
    snr_db_measured: float
    wall_ms: float


METRICS_COLUMNS = [f.name for f in fields(MetricsRow)]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        values = astuple(row) if hasattr(row, "__dataclass_fields__") else tuple(row)
        w.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def write_csv(path, rows, columns) -> None:
    Path(path).write_text(rows_to_csv(rows, columns), encoding="utf-8", newline="")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, result: "TrainResult"):
        super().__init__(message)
        self.result = result


@dataclass
class TrainResult:
    rows: list[MetricsRow]
    model: Model
    events: list[tuple[int, int]] = field(default_factory=list)  # (batch count, layer ordinal)
    total_batches: int = 0

    @property
    def best_test_acc(self) -> float:
        return max((r.test_acc for r in self.rows), default=0.0)

    def csv(self) -> str:
        return rows_to_csv(self.rows, METRICS_COLUMNS)

    def save_snapshot(self, path) -> None:
        np.savez(path, **self.model.named_params())


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.data.cifar10 is not None:
        return load_cifar10(cfg.data.cifar10)
    b = cfg.data.blobs
    return synth_blobs(
        BlobConfig(
            class_count=b.class_count,
            feature_dim=b.feature_dim,
            separation=b.separation,
            variance=b.variance,
            samples_per_class=b.samples_per_class,
            seed=cfg.seed if b.seed is None else b.seed,
        )
    )


def build_from_config(cfg: ExperimentConfig, input_shape, class_count) -> Model:
    seed = cfg.seed
    paths = PathParams(n_paths=cfg.mimo.n_paths)

    def make_link(ordinal):
        state = gen_channel(paths, cfg.mimo.n_t, cfg.mimo.n_r, stream(seed, STREAM_CHANNEL, ordinal),
                            rank=cfg.mimo.r)
        state.snr_db = cfg.snr_db
        return state, stream(seed, STREAM_NOISE, ordinal)

    act = cfg.activation
    ctx = BuildContext(
        init_rng=lambda o: stream(seed, STREAM_INIT, o),
        make_link=make_link,
        rank=cfg.mimo.r,
        constellation=Constellation(act.levels, act.delta) if act.kind == "qam" else None,
        weight_f=cfg.loss_weights.lambda_f,
        weight_b=cfg.loss_weights.lambda_b,
    )
    return build_model(cfg.model.spec(), input_shape, class_count, ctx)


def accuracy(model: Model, d: Dataset, batch_size: int) -> float:
    correct = 0
    for x, y in batches(d, batch_size, shuffle=False):
        z = model.forward(x, training=False)
        correct += int(np.sum(np.argmax(z.real, axis=1) == y))
    return correct / len(d)


def run_train(
    cfg: ExperimentConfig,
    clock: Callable[[], float] | None = None,
    datasets: tuple[Dataset, Dataset] | None = None,
) -> TrainResult:
    """Train per ``cfg`` and return one metrics row per epoch.

    ``clock`` (seconds) fills the ``wall_ms`` column; without it the column is
    0 so that output depends only on the configuration.

    Raises:
        TrainingAborted: the loss or a gradient became non-finite. The
            exception carries the rows so far and the last good model.
    """
    train, test = datasets if datasets is not None else load_datasets(cfg)
    model = build_from_config(cfg, train.feature_shape, train.class_count)
    opt = Adam(lr=cfg.optimizer.lr)
    mobility = MobilityConfig(cfg.mobility.rho, cfg.mobility.update_interval)
    paths = PathParams(n_paths=cfg.mimo.n_paths)
    oacs = model.oac_layers()
    ordinals = list(range(len(oacs)))
    mobility_rngs = [stream(cfg.seed, STREAM_MOBILITY, i) for i in ordinals]
    shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE)
    lf_w, lb_w = cfg.loss_weights.lambda_f, cfg.loss_weights.lambda_b
    result = TrainResult(rows=[], model=model)
    start = clock() if clock else 0.0
    step = 0

    for epoch in range(1, cfg.optimizer.epochs + 1):
        for layer in oacs:
            layer.channel.reset_meter()
        sums = np.zeros(4)
        n_batches = 0
        correct = seen = 0
        for x, y in batches(train, cfg.optimizer.batch_size, shuffle=True, rng=shuffle_rng):
            if len(y) < 2:
                continue  # batch statistics need two samples
            z = model.forward(x, training=True)
            loss_task, g = head_loss(z, y)
            model.backward(g)
            loss_f, loss_b = model.subspace_losses()
            bundle = total_loss(loss_task, loss_f, loss_b, lf_w, lb_w)
            if not math.isfinite(bundle.total):
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}, step {step + 1}: "
                    f"task={loss_task} f={loss_f} b={loss_b}",
                    result,
                )
            try:
                opt.step(model.named_params(), model.named_grads())
            except NonFiniteGradientError as e:
                raise TrainingAborted(f"epoch {epoch}, step {step + 1}: {e}", result) from None
            step += 1
            if step % mobility.update_interval == 0:
                for i, layer in zip(ordinals, oacs):
                    layer.channel = evolve_channel(layer.channel, mobility, paths, mobility_rngs[i])
                    result.events.append((step, i))
            sums += (loss_task, loss_f, loss_b, bundle.total)
            n_batches += 1
            correct += int(np.sum(np.argmax(z.real, axis=1) == y))
            seen += len(y)

        snrs = [l.channel.measured_snr_db() for l in oacs]
        snr = float(np.mean(snrs)) if snrs else math.inf
        test_acc = accuracy(model, test, cfg.optimizer.batch_size)
        mt, mf, mb, _ = sums / max(n_batches, 1)
        result.rows.append(
            MetricsRow(
                epoch=epoch,
                step=step,
                loss_task=float(mt),
                loss_f=float(mf),
                loss_b=float(mb),
                loss_total=float(mt + lf_w * mf + lb_w * mb),
                train_acc=correct / max(seen, 1),
                test_acc=test_acc,
                snr_db_measured=snr,
                wall_ms=round((clock() - start) * 1000.0, 3) if clock else 0.0,
            )
        )
        log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, mt, result.rows[-1].train_acc, test_acc)

    result.total_batches = step
    return result


SWEEP_ACTIVATIONS = ("crelu", "qam")


@dataclass
class SweepRow:
    point: float
    activation: str
    best_test_acc: float


def _sweep(cfg, key, values, activations, datasets) -> list[SweepRow]:
    if len(values) < 2:
        raise ValueError("a sweep needs at least two points")
    rows = []
    for v in values:
        for act in activations:
            run_cfg = with_updates(cfg, {key: v, "activation.kind": act})
            rows.append(SweepRow(v, act, run_train(run_cfg, datasets=datasets).best_test_acc))
    return rows


def run_sweep_snr(cfg, snr_list, activations=SWEEP_ACTIVATIONS) -> list[SweepRow]:
    """Best test accuracy for every (SNR, activation) pair."""
    return _sweep(cfg, "snr_db", list(snr_list), activations, load_datasets(cfg))


def run_sweep_rho(cfg, rho_list, activations=SWEEP_ACTIVATIONS) -> list[SweepRow]:
    """Best test accuracy for every (rho, activation) pair, channel evolving."""
    return _sweep(cfg, "mobility.rho", list(rho_list), activations, load_datasets(cfg))


SNR_COLUMNS = ["snr_db", "activation", "best_test_acc"]
RHO_COLUMNS = ["rho", "activation", "best_test_acc"]


def timer() -> float:
    return time.perf_counter()
