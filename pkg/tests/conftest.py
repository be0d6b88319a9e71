"""Shared oracles: quadrature, finite differences and Gaussian precision algebra.

These stay independent of the library code paths they check; they use direct
formula evaluation and plain numpy reductions only.
"""

import numpy as np
import pytest


def mixture_density_direct(x, weights, means, variances):
    """1-D normalized Gaussian-mixture density by direct formula (no log-sum-exp)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    for w, m, v in zip(weights, means, variances):
        out += w * np.exp(-((x - m) ** 2) / (2.0 * v)) / np.sqrt(2.0 * np.pi * v)
    return out


def quad_integral(fn, lo=-10.0, hi=10.0, step=1e-3):
    """Midpoint-rule integral of a 1-D callable."""
    xs = np.arange(lo, hi, step) + 0.5 * step
    return float(np.sum(fn(xs)) * step)


def fd_grad(energy_scalar_fn, x, h=1e-5):
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for d in range(x.shape[0]):
        e = np.zeros_like(x)
        e[d] = h
        g[d] = (energy_scalar_fn(x + e) - energy_scalar_fn(x - e)) / (2.0 * h)
    return g


def gaussian_product_1d(terms):
    """Precision algebra for a weighted product of 1-D Gaussians.

    terms: list of (mean, variance, weight); density prod N(m, v)^w is
    proportional to a Gaussian with precision sum w/v and precision-weighted
    mean.  Requires positive resulting precision.
    """
    prec = sum(w / v for _, v, w in terms)
    assert prec > 0, "non-integrable product"
    mean = sum(w * m / v for m, v, w in terms) / prec
    return mean, 1.0 / prec


def assert_close(a, b, rtol=0.0, atol=0.0):
    np.testing.assert_allclose(a, b, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)
