import numpy as np
import pytest


def finite_difference_input_grad(fn, x, step=1e-5):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fn(hi) - fn(lo)) / (2.0 * step)
    return grad


def relative_error(approx, exact, floor=1e-3):
    """Coordinatewise |a - e| / max(|e|, floor), reduced to the worst case."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.max(np.abs(approx - exact) / np.maximum(np.abs(exact), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
