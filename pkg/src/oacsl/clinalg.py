"""Complex dense linear algebra used by every other module.

Matrices are plain 2-D ``numpy`` arrays of dtype ``complex128``. The helpers
here add shape checking on top of numpy products and provide a cyclic
Jacobi eigensolver for Hermitian matrices, which is all the covariance
analysis downstream needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapeError",
    "HermitianEig",
    "as_matrix",
    "matmul",
    "adjoint",
    "hermitian_eig",
    "random_complex_gaussian",
]

DTYPE = np.complex128


class ShapeError(ValueError):
    """Raised when operand shapes are not conformable."""


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a 2-D complex128 array; 1-D input becomes a column."""
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got an array of shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def adjoint(a) -> np.ndarray:
    """Conjugate transpose."""
    return as_matrix(a).conj().T.copy()


@dataclass(frozen=True)
class HermitianEig:
    """Eigendecomposition ``R = U diag(eigenvalues) U^H``.

    ``eigenvalues`` are sorted in descending order and column ``j`` of
    ``eigenvectors`` belongs to ``eigenvalues[j]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament ordering: n-1 rounds of disjoint (p, q) pairs covering all pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def hermitian_eig(r, tol: float = 1e-12, max_sweeps: int = 100) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once. Pairs are grouped into
    disjoint rounds (round-robin ordering) so that all rotations of a round are
    applied at once; disjoint plane rotations commute, so this is the same
    cyclic method with a particular pair order.

    Iteration stops once every off-diagonal magnitude is below
    ``tol * max(1, ||R||_F)`` or after ``max_sweeps`` sweeps.

    Raises:
        ShapeError: ``r`` is not square.
        ValueError: ``r`` is not Hermitian to within 1e-10 componentwise.
    """
    a = as_matrix(r).copy()
    n, m = a.shape
    if n != m:
        raise ShapeError(f"hermitian_eig needs a square matrix, got {n}x{m}")
    if n and np.max(np.abs(a - a.conj().T)) > 1e-10:
        raise ValueError("hermitian_eig: input is not Hermitian within 1e-10")
    a = 0.5 * (a + a.conj().T)
    v = np.eye(n, dtype=DTYPE)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))
    rounds = _round_robin(n)

    for _ in range(max_sweeps):
        off = np.abs(a - np.diag(np.diag(a)))
        if n < 2 or off.max() < threshold:
            break
        for p, q in rounds:
            b = a[p, q]
            mag = np.abs(b)
            active = mag > 0.0
            if not active.any():
                continue
            p, q, b, mag = p[active], q[active], b[active], mag[active]
            app = a[p, p].real
            aqq = a[q, q].real
            phase = b / mag
            theta = (aqq - app) / (2.0 * mag)
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.hypot(t, 1.0)
            s = t * c
            # 2x2 block of J: [[c, s], [-s*conj(phase), c*conj(phase)]]
            jpp = c
            jpq = s
            jqp = -s * phase.conj()
            jqq = c * phase.conj()

            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = ap * jpp + aq * jqp
            a[:, q] = ap * jpq + aq * jqq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = np.conj(jpp)[:, None] * ap + np.conj(jqp)[:, None] * aq
            a[q, :] = np.conj(jpq)[:, None] * ap + np.conj(jqq)[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * jpp + vq * jqp
            v[:, q] = vp * jpq + vq * jqq

    w = np.diag(a).real.copy()
    order = np.argsort(-w, kind="stable")
    return HermitianEig(eigenvalues=w[order], eigenvectors=v[:, order])


def random_complex_gaussian(
    rows: int, cols: int, variance: float, rng: np.random.Generator
) -> np.ndarray:
    """I.i.d. circularly symmetric complex Gaussian entries.

    Real and imaginary parts are independent N(0, variance / 2), so each entry
    has ``E|z|^2 = variance``.
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    z = rng.standard_normal((rows, cols, 2))
    out = (z[..., 0] + 1j * z[..., 1]) * np.sqrt(variance / 2.0)
    return out.astype(DTYPE, copy=False)
