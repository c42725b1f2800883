import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oacsl.beamform import (
    CovarianceAccumulator,
    backward_subspace_loss,
    forward_subspace_loss,
    total_loss,
    weak_subspace,
)
from oacsl.clinalg import ShapeError, hermitian_eig, random_complex_gaussian

from conftest import fd_grad, rel_err


def random_unitary(n, rng):
    q, r = np.linalg.qr(random_complex_gaussian(n, n, 1.0, rng))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def acc_with_spectrum(eigs, rng):
    """Accumulator whose mean covariance is ``Q diag(eigs) Q^H`` for a random unitary Q."""
    q = random_unitary(len(eigs), rng)
    acc = CovarianceAccumulator(len(eigs))
    acc.accumulate(q * np.sqrt(np.asarray(eigs, dtype=float)))
    acc.n_samples = 1
    return acc, q


def test_accumulate_unit_vector():
    acc = CovarianceAccumulator(3).accumulate(np.array([1.0, 0, 0]))
    assert np.array_equal(acc.mean(), np.diag([1.0, 0, 0]))
    assert acc.n_samples == 1


def test_sign_symmetry(rng):
    v = random_complex_gaussian(4, 1, 1.0, rng)
    a = CovarianceAccumulator(4).accumulate(v).accumulate(-v)
    b = CovarianceAccumulator(4).accumulate(v).accumulate(v)
    assert np.array_equal(a.mean(), b.mean())


def test_monte_carlo_identity(rng):
    # each of the dim^2 entries of the sample mean has variance 1/n, so the
    # squared Frobenius error averages dim^2 / n = 0.064 for dim 8, n = 1000
    errs = []
    for _ in range(200):
        acc = CovarianceAccumulator(8).accumulate(random_complex_gaussian(8, 1000, 1.0, rng))
        errs.append(np.linalg.norm(acc.mean() - np.eye(8)) ** 2)
    assert abs(np.mean(errs) / 0.064 - 1) <= 0.05
    assert np.sqrt(np.median(errs)) <= 0.3


def test_accumulator_rejects_and_resets():
    acc = CovarianceAccumulator(3)
    with pytest.raises(ShapeError):
        acc.accumulate(np.ones(4))
    with pytest.raises(ValueError):
        acc.mean()
    acc.accumulate(np.ones(3))
    acc.reset()
    assert acc.n_samples == 0 and np.all(acc.sum_outer == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_accumulator_hermitian_psd(seed, count):
    rng = np.random.default_rng(seed)
    acc = CovarianceAccumulator(5)
    for _ in range(count):
        acc.accumulate(random_complex_gaussian(5, 1, 3.0, rng))
    s = acc.sum_outer
    assert np.max(np.abs(s - s.conj().T)) <= 1e-12
    assert hermitian_eig(acc.mean()).eigenvalues[-1] >= -1e-10


# --- forward loss -------------------------------------------------------------


def test_forward_loss_zero_on_top_subspace(rng):
    acc, q = acc_with_spectrum([5, 4, 3, 0.5, 0.2, 0.1], rng)
    u = hermitian_eig(acc.mean()).eigenvectors
    loss, _ = forward_subspace_loss(u[:, :3], acc, 3)
    assert loss <= 1e-18


def test_forward_loss_unit_on_worst_direction(rng):
    acc, _ = acc_with_spectrum([5, 4, 3, 0.5, 0.2, 0.1], rng)
    u = hermitian_eig(acc.mean()).eigenvectors
    c = np.column_stack([u[:, 0], u[:, 1], u[:, -1]])
    loss, _ = forward_subspace_loss(c, acc, 3)
    assert abs(loss - 1) <= 1e-12


def test_forward_loss_direct_summation(rng):
    acc = CovarianceAccumulator(6).accumulate(random_complex_gaussian(6, 20, 1.0, rng))
    c = random_complex_gaussian(6, 2, 1.0, rng)
    u = hermitian_eig(acc.mean()).eigenvectors
    oracle = 0.0
    for j in range(2, 6):
        for col in range(2):
            proj = sum(u[i, j].conjugate() * c[i, col] for i in range(6))
            oracle += abs(proj) ** 2
    loss, _ = forward_subspace_loss(c, acc, 2)
    assert abs(loss - oracle) <= 1e-10


def test_forward_gradient_with_fixed_subspace(rng):
    acc = CovarianceAccumulator(5).accumulate(random_complex_gaussian(5, 9, 1.0, rng))
    c = random_complex_gaussian(5, 2, 1.0, rng)
    _, g = forward_subspace_loss(c, acc, 2)
    # the covariance does not depend on C, so differencing holds the eigenvectors fixed
    assert rel_err(g, fd_grad(lambda: forward_subspace_loss(c, acc, 2)[0], c)) <= 1e-6


def test_forward_descent_steers_combiner(rng):
    acc, _ = acc_with_spectrum([9, 7, 5, 4, 1, 0.5, 0.3, 0.1], rng)
    c = random_complex_gaussian(8, 4, 1.0, rng)
    start, _ = forward_subspace_loss(c, acc, 4)
    for _ in range(500):
        _, g = forward_subspace_loss(c, acc, 4)
        c = c - 0.1 * g
    end, _ = forward_subspace_loss(c, acc, 4)
    assert end <= 1e-4 * start


def test_forward_rejects():
    with pytest.raises(ValueError):
        forward_subspace_loss(np.ones((3, 1)), CovarianceAccumulator(3), 1)
    with pytest.raises(ShapeError):
        forward_subspace_loss(np.ones((4, 1)), CovarianceAccumulator(3).accumulate(np.ones(3)), 1)


# --- backward loss ------------------------------------------------------------


def test_backward_loss_zero_in_top_subspace(rng):
    acc, _ = acc_with_spectrum([3, 2, 1, 0.1], rng)
    v = hermitian_eig(acc.mean()).eigenvectors
    x = v[:, :2] @ random_complex_gaussian(2, 7, 1.0, rng)
    loss, _ = backward_subspace_loss(acc, x, 2)
    assert loss <= 1e-18


def test_backward_loss_unit_on_worst_direction(rng):
    acc, _ = acc_with_spectrum([3, 2, 1, 0.1], rng)
    v = hermitian_eig(acc.mean()).eigenvectors
    loss, _ = backward_subspace_loss(acc, v[:, -1:], 2)
    assert abs(loss - 1) <= 1e-12


def test_backward_loss_projector_oracle(rng):
    acc = CovarianceAccumulator(5).accumulate(random_complex_gaussian(5, 12, 1.0, rng))
    x = random_complex_gaussian(5, 6, 1.0, rng)
    top = hermitian_eig(acc.mean()).eigenvectors[:, :3]
    resid = x - top @ (top.conj().T @ x)
    oracle = np.mean(np.sum(np.abs(resid) ** 2, axis=0))
    loss, _ = backward_subspace_loss(acc, x, 3)
    assert abs(loss - oracle) <= 1e-10


def test_backward_gradient_and_batched_layout(rng):
    acc = CovarianceAccumulator(4).accumulate(random_complex_gaussian(4, 10, 1.0, rng))
    x = random_complex_gaussian(2 * 4 * 3, 1, 1.0, rng).reshape(2, 4, 3)  # K x N_t x B
    loss, g = backward_subspace_loss(acc, x, 2)
    assert g.shape == x.shape
    flat = x.transpose(1, 0, 2).reshape(4, 6)
    loss_flat, g_flat = backward_subspace_loss(acc, flat, 2)
    assert loss == pytest.approx(loss_flat, abs=1e-14)
    assert np.allclose(g.transpose(1, 0, 2).reshape(4, 6), g_flat, atol=1e-14)
    assert rel_err(g, fd_grad(lambda: backward_subspace_loss(acc, x, 2)[0], x)) <= 1e-6


# --- invariances --------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_losses_depend_on_subspace_not_basis(seed):
    rng = np.random.default_rng(seed)
    acc = CovarianceAccumulator(6).accumulate(random_complex_gaussian(6, 15, 1.0, rng))
    c = random_complex_gaussian(6, 2, 1.0, rng)
    u = weak_subspace(acc, 2)
    rotated = u @ random_unitary(u.shape[1], rng)
    direct = np.sum(np.abs(rotated.conj().T @ c) ** 2)
    loss, _ = forward_subspace_loss(c, acc, 2)
    assert loss >= 0
    assert abs(direct - loss) <= 1e-10 * max(1.0, loss)
    lb, _ = backward_subspace_loss(acc, c, 2)
    assert lb >= 0
    assert abs(lb - np.mean(np.sum(np.abs(rotated.conj().T @ c) ** 2, axis=0))) <= 1e-10 * max(1.0, lb)


def test_degenerate_eigen_gap(rng):
    # eigenvalues r and r+1 coincide; inputs inside the tied block plus the
    # strong block have the same energy for any split of the tie
    losses = []
    for trial in range(10):
        local = np.random.default_rng([7, trial])
        q = random_unitary(5, np.random.default_rng(3))
        tied = q[:, 1:3] @ random_unitary(2, local)
        basis = np.column_stack([q[:, 0], tied, q[:, 3:]])
        acc = CovarianceAccumulator(5)
        acc.accumulate(basis * np.sqrt([4.0, 2.0, 2.0, 1.0, 0.5]))
        c = q[:, :1] + 0.3 * q[:, 3:4]  # no component in the tied block
        losses.append(forward_subspace_loss(c, acc, 2)[0])
    assert all(np.isfinite(losses))
    assert max(losses) - min(losses) <= 1e-8


def test_total_loss_examples():
    assert total_loss(1, 0, 0, 1, 1).total == 1
    assert total_loss(0.5, 0.2, 0.3).total == pytest.approx(1.0, abs=1e-15)
    assert total_loss(0.7, 5.0, 9.0, 0.0, 0.0).total == 0.7
