import os

import numpy as np
import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY_DIR = os.path.join(REPO_ROOT, "data", "toy")


@pytest.fixture(scope="session")
def toy_train_path():
    return os.path.join(TOY_DIR, "train.tsv")


@pytest.fixture(scope="session")
def toy_dev_path():
    return os.path.join(TOY_DIR, "dev.tsv")


@pytest.fixture(scope="session")
def toy_test_path():
    return os.path.join(TOY_DIR, "test.tsv")


def central_diff(f, arr: np.ndarray, index, h: float = 1e-4) -> float:
    """Two-sided finite difference of a scalar function of one array entry."""
    flat = arr.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    fp = f()
    flat[index] = orig - h
    fm = f()
    flat[index] = orig
    return (fp - fm) / (2.0 * h)


def assert_grad_matches(f, tensors, h: float = 1e-4, rtol: float = 1e-4,
                        atol: float = 1e-6, max_entries: int = 12, seed: int = 0):
    """Compare tape gradients of scalar f() against central differences.

    ``tensors`` are the requires_grad leaves; f() must rebuild the graph
    from their current data each call and return the scalar loss value.
    """
    from sbgru.tensor import Tape, backward, zero_grads

    rng = np.random.default_rng(seed)
    with Tape() as tape:
        loss = f()
        zero_grads(tensors)
        backward(loss, tape)
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
             for t in tensors]

    def value():
        return float(f().data)

    for t, g in zip(tensors, grads):
        flat_g = g.reshape(-1)
        n = t.data.size
        picks = range(n) if n <= max_entries else rng.choice(
            n, size=max_entries, replace=False)
        for i in picks:
            fd = central_diff(value, t.data, i, h)
            assert abs(fd - flat_g[i]) <= atol + rtol * abs(fd), (
                f"{t.name or 'tensor'}[{i}]: analytic {flat_g[i]} vs fd {fd}")
