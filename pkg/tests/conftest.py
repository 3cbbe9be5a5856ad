import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference_gradient(value_fn, x, y, h=1e-6):
    """Finite-difference oracle: central differences of value_fn(x, y) in
    every coordinate of both samples."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fx = np.zeros_like(x)
    fy = np.zeros_like(y)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fx[idx] = (value_fn(xp, y) - value_fn(xm, y)) / (2 * h)
    for idx in np.ndindex(y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        fy[idx] = (value_fn(x, yp) - value_fn(x, ym)) / (2 * h)
    return fx, fy


def relative_gradient_error(analytic, numeric):
    a = np.concatenate([np.ravel(g) for g in analytic])
    b = np.concatenate([np.ravel(g) for g in numeric])
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)
