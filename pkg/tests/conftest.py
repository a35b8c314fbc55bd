"""Shared test helpers: the finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np
import pytest

FD_STEP = 1e-5


def finite_difference(f, arrays, step: float = FD_STEP):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array.

    Independent of the autodiff tape: perturbs raw numpy entries in place and
    re-evaluates f, which must return a plain float.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(*arrays)
            flat[i] = orig - step
            down = f(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def away_from_zero(rng: np.random.Generator, shape, low: float = 0.1, high: float = 1.0) -> np.ndarray:
    """Uniform values in [-high,-low] u [low,high]; keeps kinks out of reach
    of the finite-difference step."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
