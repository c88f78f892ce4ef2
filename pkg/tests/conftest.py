"""Shared helpers: random minimal systems and data collection."""

import numpy as np
import pytest

from deepo.plant import PlantModel


def random_minimal(rng, n, m, p, rho=0.9):
    """Random minimal (A, B, C) with spectral radius rescaled to rho."""
    for _ in range(50):
        a = rng.standard_normal((n, n))
        a *= rho / max(np.max(np.abs(np.linalg.eigvals(a))), 1e-12)
        b = rng.standard_normal((n, m))
        c = rng.standard_normal((p, n))
        try:
            return PlantModel(a, b, c)
        except ValueError:
            continue
    raise RuntimeError("could not draw a minimal system")


def random_pair(rng, r, m, rho=0.8):
    """Random controllable (A, B) pair for direct-state problems."""
    for _ in range(50):
        a = rng.standard_normal((r, r))
        a *= rho / max(np.max(np.abs(np.linalg.eigvals(a))), 1e-12)
        b = rng.standard_normal((r, m))
        blocks = [np.linalg.matrix_power(a, k) @ b for k in range(r)]
        if np.linalg.matrix_rank(np.hstack(blocks)) == r:
            return a, b
    raise RuntimeError("could not draw a controllable pair")


def direct_data(rng, a, b, steps, amplitude=1.0, noise_std=0.0):
    """Open-loop (u, z, z+) samples as columns from z+ = A z + B u + w."""
    r, m = a.shape[0], b.shape[1]
    u = rng.uniform(-amplitude, amplitude, size=(m, steps))
    z = np.zeros((r, steps + 1))
    z[:, 0] = rng.standard_normal(r) * 0.1
    for t in range(steps):
        w = rng.standard_normal(r) * noise_std
        z[:, t + 1] = a @ z[:, t] + b @ u[:, t] + w
    return u, z[:, :-1], z[:, 1:]


def drive(model, inputs):
    """Apply an input sequence and return the measured outputs, shape (T, p)."""
    return np.array([model.step(u) for u in inputs])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
