"""Sample-quality metrics and the report container for experiments."""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "histogram_kl",
    "mmd_rbf",
    "ess",
    "grid_density_1d",
    "grid_density_2d",
    "MetricsReport",
    "config_hash",
]

_SMOOTH = 1e-9


def grid_density_1d(energy, lo, hi, n_grid=20001):
    """Quadrature-normalized density exp(-E)/Z on [lo, hi] as a callable.

    Midpoint quadrature on a uniform grid; the oracle normalizer for
    unnormalized 1-D composed energies.
    """
    xs = np.linspace(lo, hi, n_grid)
    mid = 0.5 * (xs[:-1] + xs[1:])
    e = energy.energy(mid[:, None])
    m = np.min(e)
    z = np.sum(np.exp(-(e - m))) * (xs[1] - xs[0])
    log_z = np.log(z) - m

    def density(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.exp(-energy.energy(x[:, None]) - log_z)

    return density


def grid_density_2d(energy, lo, hi, n_grid=401):
    """2-D analogue of grid_density_1d on the square [lo, hi]^2."""
    xs = np.linspace(lo, hi, n_grid)
    mid = 0.5 * (xs[:-1] + xs[1:])
    gx, gy = np.meshgrid(mid, mid, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    e = energy.energy(pts)
    m = np.min(e)
    cell = (xs[1] - xs[0]) ** 2
    z = np.sum(np.exp(-(e - m))) * cell
    log_z = np.log(z) - m

    def density(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.exp(-energy.energy(x) - log_z)

    return density


def histogram_kl(samples, ref_density, bins=100, hist_range=None):
    """KL(binned empirical || binned reference) with 1e-9 additive smoothing.

    ``samples`` is (n,) or (n, 1) for 1-D, (n, 2) for 2-D; ``ref_density`` a
    normalized density callable.  The reference is binned by midpoint
    quadrature.  Raises when the reference vanishes inside the range (the
    range is then too wide or misplaced) so the estimate stays finite.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, d = samples.shape
    if n < 1000:
        raise ConfigError("histogram_kl needs at least 1000 samples")
    if d not in (1, 2):
        raise ConfigError("histogram_kl supports 1-D and 2-D samples")
    if hist_range is None:
        lo = samples.min(axis=0) - 1e-9
        hi = samples.max(axis=0) + 1e-9
        hist_range = (lo, hi) if d == 2 else (float(lo[0]), float(hi[0]))
    if d == 1:
        lo, hi = hist_range
        counts, edges = np.histogram(samples[:, 0], bins=bins, range=(lo, hi))
        mids = 0.5 * (edges[:-1] + edges[1:])
        q = np.asarray(ref_density(mids), dtype=float)
        if np.any(q <= 0) or not np.all(np.isfinite(q)):
            raise ConfigError(
                "reference density vanishes inside the histogram range; widen or move the range"
            )
        q = q * np.diff(edges)
    else:
        lo, hi = hist_range
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (2,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (2,))
        counts, ex, ey = np.histogram2d(
            samples[:, 0], samples[:, 1], bins=bins, range=[(lo[0], hi[0]), (lo[1], hi[1])]
        )
        mx = 0.5 * (ex[:-1] + ex[1:])
        my = 0.5 * (ey[:-1] + ey[1:])
        gx, gy = np.meshgrid(mx, my, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        q = np.asarray(ref_density(pts), dtype=float)
        if np.any(q <= 0) or not np.all(np.isfinite(q)):
            raise ConfigError(
                "reference density vanishes inside the histogram range; widen or move the range"
            )
        q = (q * np.diff(ex)[0] * np.diff(ey)[0]).reshape(counts.shape)
        counts = counts.ravel()
        q = q.ravel()
    p = counts / counts.sum() + _SMOOTH
    p /= p.sum()
    q = q / q.sum() + _SMOOTH
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def mmd_rbf(samples_a, samples_b, bandwidth=None):
    """Unbiased squared MMD with an RBF kernel exp(-||x-y||^2 / (2 h^2)).

    Bandwidth defaults to the median pairwise distance of the pooled sets.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.ndim == 2 and a.shape[1] != b.shape[1]:
        raise ConfigError("sample sets must share dimension")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ConfigError("mmd_rbf needs at least 2 points per set")

    def sq_dists(u, v):
        return np.sum((u[:, None, :] - v[None, :, :]) ** 2, axis=2)

    daa = sq_dists(a, a)
    dbb = sq_dists(b, b)
    dab = sq_dists(a, b)
    if bandwidth is None:
        pooled = np.concatenate(
            [daa[np.triu_indices(len(a), k=1)], dbb[np.triu_indices(len(b), k=1)], dab.ravel()]
        )
        bandwidth = np.sqrt(np.median(pooled))
        if bandwidth <= 0:
            bandwidth = 1.0
    h2 = 2.0 * bandwidth * bandwidth
    kaa = np.exp(-daa / h2)
    kbb = np.exp(-dbb / h2)
    kab = np.exp(-dab / h2)
    m, n = len(a), len(b)
    term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(term_a + term_b - 2.0 * kab.mean())


def ess(chain):
    """Effective sample size via Geyer's initial positive sequence.

    Constant chains return their length with a warning (autocorrelation is
    undefined there).
    """
    x = np.asarray(chain, dtype=float)
    if x.ndim != 1:
        raise ConfigError("ess expects a scalar series")
    n = len(x)
    if n < 100:
        raise ConfigError("ess needs a series of length >= 100")
    var = x.var()
    if var == 0:
        warnings.warn("constant chain: reporting ESS = n", stacklevel=2)
        return float(n)
    xc = x - x.mean()
    # autocovariance via FFT
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    rho = acov / acov[0]
    tau = 1.0
    k = 1
    while k + 1 < n:
        gamma = rho[k] + rho[k + 1]
        if gamma <= 0:
            break
        tau += 2.0 * gamma
        k += 2
    return float(n / tau)


def config_hash(config):
    """Stable hash of a JSON-serializable config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetricsReport:
    """Named scalar metrics plus the metadata needed to reproduce them."""

    name: str
    metrics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)  # name -> bool (passed)

    def __post_init__(self):
        for k, v in self.metrics.items():
            if isinstance(v, float) and not np.isfinite(v):
                raise ConfigError(f"metric {k!r} is not finite: {v}")

    @property
    def passed(self):
        return all(self.thresholds.values())

    def to_json(self):
        return {
            "name": self.name,
            "metrics": self.metrics,
            "metadata": self.metadata,
            "thresholds": self.thresholds,
            "passed": self.passed,
        }
