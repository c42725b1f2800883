"""Self-adaptive beamforming penalties.

Both ends estimate a covariance over the transmissions of one batch and
eigendecompose it. The eigenvectors beyond the first ``r`` span the weak
subchannels; the forward penalty is the combiner energy falling there and the
backward penalty is the transmit energy falling in the weak directions of the
backward (gradient) covariance. Eigenvectors are treated as constants: no
gradient flows through the eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clinalg import DTYPE, ShapeError, as_matrix, hermitian_eig

__all__ = [
    "CovarianceAccumulator",
    "LossBundle",
    "weak_subspace",
    "forward_subspace_loss",
    "backward_subspace_loss",
    "total_loss",
]


@dataclass
class CovarianceAccumulator:
    dim: int
    sum_outer: np.ndarray = field(default=None)  # type: ignore[assignment]
    n_samples: int = 0

    def __post_init__(self):
        if self.sum_outer is None:
            self.sum_outer = np.zeros((self.dim, self.dim), dtype=DTYPE)

    def accumulate(self, v) -> "CovarianceAccumulator":
        """Add ``v v^H`` for each column of ``v``."""
        v = as_matrix(v)
        if v.shape[0] != self.dim:
            raise ShapeError(f"accumulator has dim {self.dim}, got vectors of length {v.shape[0]}")
        self.sum_outer += v @ v.conj().T
        self.n_samples += v.shape[1]
        return self

    def mean(self) -> np.ndarray:
        if self.n_samples == 0:
            raise ValueError("covariance accumulator is empty")
        return self.sum_outer / self.n_samples

    def reset(self) -> None:
        self.sum_outer[:] = 0.0
        self.n_samples = 0


def accumulate(acc: CovarianceAccumulator, v) -> CovarianceAccumulator:
    return acc.accumulate(v)


def weak_subspace(acc: CovarianceAccumulator, r: int) -> np.ndarray:
    """Orthonormal basis of eigenvectors ``r+1 .. dim`` of the mean covariance."""
    eig = hermitian_eig(acc.mean())
    return eig.eigenvectors[:, r:]


def forward_subspace_loss(c, acc: CovarianceAccumulator, r: int) -> tuple[float, np.ndarray]:
    """Combiner energy in the weak receive subspace, ``||C^H U_weak||_F^2``.

    Returns the loss and its gradient ``2 U_weak U_weak^H C``.
    """
    c = as_matrix(c)
    if c.shape[0] != acc.dim:
        raise ShapeError(f"combiner has {c.shape[0]} rows, covariance is {acc.dim}-dimensional")
    u = weak_subspace(acc, r)
    proj = u.conj().T @ c
    loss = float(np.sum(np.abs(proj) ** 2))
    return loss, 2.0 * (u @ proj)


def backward_subspace_loss(
    acc_b: CovarianceAccumulator, x_t, r: int
) -> tuple[float, np.ndarray]:
    """Mean transmit energy in the weak backward subspace.

    ``x_t`` holds the transmitted columns (any leading batch layout whose
    first axis after flattening is N_t is accepted as ``N_t x M``). Returns
    the loss and the gradient with respect to each column.
    """
    x_t = np.asarray(x_t)
    if x_t.ndim == 3:
        k, n_t, b = x_t.shape
        flat = x_t.transpose(1, 0, 2).reshape(n_t, k * b)
    else:
        flat = as_matrix(x_t)
    if flat.shape[0] != acc_b.dim:
        raise ShapeError(f"transmit vectors have length {flat.shape[0]}, covariance is {acc_b.dim}")
    v = weak_subspace(acc_b, r)
    m = flat.shape[1]
    proj = v.conj().T @ flat
    loss = float(np.sum(np.abs(proj) ** 2)) / m
    grad = (2.0 / m) * (v @ proj)
    if x_t.ndim == 3:
        grad = grad.reshape(n_t, k, b).transpose(1, 0, 2)
    return loss, grad


@dataclass(frozen=True)
class LossBundle:
    task: float
    forward: float
    backward: float
    weight_f: float = 1.0
    weight_b: float = 1.0

    @property
    def total(self) -> float:
        return self.task + self.weight_f * self.forward + self.weight_b * self.backward


def total_loss(
    task: float, forward: float, backward: float, weight_f: float = 1.0, weight_b: float = 1.0
) -> LossBundle:
    return LossBundle(task, forward, backward, weight_f, weight_b)
