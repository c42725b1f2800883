import numpy as np
import pytest


def fd_grad(loss, z: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of a real ``loss()`` over Re and Im of ``z`` (mutated in place)."""
    g = np.zeros_like(z)
    flat = z.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        base = flat[i]
        parts = []
        for d in (step, 1j * step):
            flat[i] = base + d
            up = loss()
            flat[i] = base - d
            down = loss()
            parts.append((up - down) / (2 * step))
        flat[i] = base
        gflat[i] = parts[0] + 1j * parts[1]
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed again after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
