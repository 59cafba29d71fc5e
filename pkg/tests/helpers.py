"""Shared oracles for the test-suite (finite differences, random nets)."""

import numpy as np

from dpcert.nn import MlpModel


def central_diff(fn, theta, step=1e-5):
    """Central finite differences with step scaled by parameter magnitude."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        out[i] = (fn(tp) - fn(tm)) / (2 * h)
    return out


def rel_err(a, b):
    """Norm-wise relative error of ``a`` against the reference ``b``."""
    denom = max(np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)


def random_net(rng, d, hidden, classes, activation="tanh", scale=1.0):
    dims = [d, *hidden, classes]
    layers = [(scale * rng.normal(size=(o, i)) / np.sqrt(i), 0.1 * rng.normal(size=o))
              for i, o in zip(dims[:-1], dims[1:])]
    return MlpModel(layers, activation)
