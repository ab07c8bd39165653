import numpy as np
import pytest

from encgnn import autodiff as ad
from encgnn.graph import build_graph


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
        it.iternext()
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)


def grad_of(build, leaf_data: np.ndarray):
    """Analytic gradient of scalar build(leaf_tensor) at leaf_data."""
    tape = ad.Tape()
    leaf = ad.Tensor(leaf_data)
    with ad.active_tape(tape):
        tape.watch(leaf)
        loss = build(leaf)
        grads = ad.backward(tape, loss, [leaf])
    return grads[leaf.tape_id].data


def check_gradient(build, forward, leaf_data, tol=1e-5, h=1e-5):
    """Compare reverse-mode and finite-difference gradients."""
    analytic = grad_of(build, leaf_data)
    numeric = fd_gradient(forward, np.asarray(leaf_data, dtype=np.float64), h=h)
    err = rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def path2():
    return build_graph([(0, 1)], 2)


@pytest.fixture
def triangle():
    return build_graph([(0, 1), (1, 2), (0, 2)], 3)


def random_graph(rng: np.random.Generator, n: int, p: float = 0.5):
    """Erdos-Renyi helper for property tests; may contain isolated nodes."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build_graph(pairs, n)
