"""Multipath MIMO channel: generation, mobility, and reciprocal transmission.

The forward link maps ``N_t`` transmit antennas to ``N_r`` receive antennas
through ``H`` (``N_r x N_t``). The backward link is the plain transpose ``H^T``
of the very same matrix, which is what lets gradients travel back without
anyone estimating ``H``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .clinalg import DTYPE, ShapeError, as_matrix, random_complex_gaussian

__all__ = [
    "PathParams",
    "ChannelState",
    "MobilityConfig",
    "steering",
    "gen_channel",
    "evolve_channel",
    "calibrate_noise",
    "transmit_forward",
    "transmit_backward",
]

EMA_DECAY = 0.9


@dataclass(frozen=True)
class PathParams:
    n_paths: int = 8
    gain_magnitude_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        low, high = self.gain_magnitude_range
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not 0 <= low <= high:
            raise ValueError(f"bad gain magnitude range {self.gain_magnitude_range}")


@dataclass
class ChannelState:
    """Channel matrix plus the noise bookkeeping of one link.

    When ``snr_db`` is set, ``noise_variance`` is re-derived from the running
    received-power estimate on every forward transmission. When it is None the
    noise variance stays wherever it was put (0 gives a noiseless link).
    """

    h: np.ndarray
    rank: int
    noise_variance: float = 0.0
    signal_power_ema: float | None = None
    snr_db: float | None = None
    # running totals for measuring the SNR actually delivered
    signal_energy: float = 0.0
    noise_energy: float = 0.0
    uses: int = field(default=0)

    def __post_init__(self):
        self.h = as_matrix(self.h)
        if not 1 <= self.rank <= min(self.h.shape):
            raise ValueError(f"rank {self.rank} impossible for a {self.h.shape} channel")

    @property
    def n_r(self) -> int:
        return self.h.shape[0]

    @property
    def n_t(self) -> int:
        return self.h.shape[1]

    def reset_meter(self) -> None:
        self.signal_energy = 0.0
        self.noise_energy = 0.0
        self.uses = 0

    def measured_snr_db(self) -> float:
        """Received signal energy over injected noise energy since the last reset."""
        if self.noise_energy == 0.0:
            return math.inf
        return 10.0 * math.log10(self.signal_energy / self.noise_energy)


@dataclass(frozen=True)
class MobilityConfig:
    rho: float = 0.0
    update_interval: int = 50

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.update_interval < 1:
            raise ValueError("update_interval must be at least 1")


def steering(n_antennas: int, angle: float) -> np.ndarray:
    """Uniform linear array response ``(1, e^{j angle}, ..., e^{j (n-1) angle})^T``."""
    if n_antennas < 1:
        raise ValueError("steering vector needs at least one antenna")
    m = np.arange(n_antennas)
    return np.exp(1j * m * angle).astype(DTYPE).reshape(-1, 1)


def channel_from_paths(gains, arrival, departure, n_t: int, n_r: int) -> np.ndarray:
    """Sum of rank-one path terms ``a_n * steer(n_r, theta_n)^H steer(n_t, phi_n)^T``."""
    h = np.zeros((n_r, n_t), dtype=DTYPE)
    for a, theta, phi in zip(gains, arrival, departure):
        h += a * (steering(n_r, theta).conj() @ steering(n_t, phi).T)
    return h


def gen_channel(
    params: PathParams,
    n_t: int,
    n_r: int,
    rng: np.random.Generator,
    rank: int | None = None,
) -> ChannelState:
    """Draw a fresh multipath channel.

    Gain magnitudes are uniform on ``params.gain_magnitude_range``; gain phases
    and both angles are uniform on [-pi, pi). ``rank`` defaults to the path
    count (clipped to the array size).
    """
    if n_t < 1 or n_r < 1:
        raise ValueError("antenna counts must be positive")
    p = params.n_paths
    low, high = params.gain_magnitude_range
    mag = rng.uniform(low, high, p)
    gain_phase = rng.uniform(-np.pi, np.pi, p)
    theta = rng.uniform(-np.pi, np.pi, p)
    phi = rng.uniform(-np.pi, np.pi, p)
    h = channel_from_paths(mag * np.exp(1j * gain_phase), theta, phi, n_t, n_r)
    if rank is None:
        rank = min(p, n_t, n_r)
    return ChannelState(h=h, rank=rank)


def mix_channels(h: np.ndarray, h_new: np.ndarray, rho: float) -> np.ndarray:
    return (1.0 - rho) * h + rho * h_new


def evolve_channel(
    current: ChannelState,
    config: MobilityConfig,
    params: PathParams,
    rng: np.random.Generator,
) -> ChannelState:
    """One mobility step ``H <- (1 - rho) H + rho H_fresh``.

    A fresh channel is always drawn, even for rho = 0, so the generator
    advances identically whatever rho is.
    """
    fresh = gen_channel(params, current.n_t, current.n_r, rng, rank=current.rank)
    return dataclasses.replace(current, h=mix_channels(current.h, fresh.h, config.rho))


def calibrate_noise(state: ChannelState, snr_db: float) -> ChannelState:
    """Set the noise variance so the running received power sits ``snr_db`` above it."""
    ema = state.signal_power_ema
    if ema is None or not ema > 0:
        raise ValueError(f"cannot calibrate noise from power estimate {ema!r}")
    state.noise_variance = ema / 10.0 ** (snr_db / 10.0)
    return state


def _update_power_ema(state: ChannelState, powers: np.ndarray) -> None:
    # Sequential ema <- 0.9 ema + 0.1 p over the columns, in closed form.
    if powers.size == 0:
        return
    if state.signal_power_ema is None:
        ema = float(powers[0])
        powers = powers[1:]
    else:
        ema = state.signal_power_ema
    n = powers.size
    if n:
        weights = (1.0 - EMA_DECAY) * EMA_DECAY ** np.arange(n - 1, -1, -1)
        ema = EMA_DECAY**n * ema + float(weights @ powers)
    state.signal_power_ema = ema


def transmit_forward(
    state: ChannelState, x_t, rng: np.random.Generator
) -> np.ndarray:
    """Send each column of ``x_t`` over ``H`` and add receiver noise.

    Each column is one channel use. The received-power estimate is updated
    column by column; if the link is SNR-calibrated, the noise variance for
    the whole block is then derived from the updated estimate.
    """
    x_t = as_matrix(x_t)
    if x_t.shape[0] != state.n_t:
        raise ShapeError(f"transmit_forward: expected {state.n_t} transmit rows, got {x_t.shape[0]}")
    clean = state.h @ x_t
    powers = np.sum(np.abs(clean) ** 2, axis=0) / state.n_r
    _update_power_ema(state, powers)
    if state.snr_db is not None and state.signal_power_ema:
        calibrate_noise(state, state.snr_db)
    state.signal_energy += float(np.sum(powers)) * state.n_r
    state.uses += x_t.shape[1]
    if state.noise_variance == 0.0:
        return clean
    noise = random_complex_gaussian(*clean.shape, state.noise_variance, rng)
    state.noise_energy += float(np.sum(np.abs(noise) ** 2))
    return clean + noise


def transmit_backward(
    state: ChannelState, s, rng: np.random.Generator
) -> np.ndarray:
    """Send each column of ``s`` back over ``H^T`` with the forward noise level."""
    s = as_matrix(s)
    if s.shape[0] != state.n_r:
        raise ShapeError(f"transmit_backward: expected {state.n_r} rows, got {s.shape[0]}")
    out = state.h.T @ s
    if state.noise_variance == 0.0:
        return out
    return out + random_complex_gaussian(*out.shape, state.noise_variance, rng)
