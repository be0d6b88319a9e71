"""Energy functions, Gaussian-mixture testbeds and noise schedules.

Distributions are represented by a scalar energy E(x) with p(x) proportional
to exp(-E(x)).  Analytic testbeds (Gaussian mixtures) use the normalized
-log-density convention so quadrature checks against 1 are possible; composed
energies built on top of them are unnormalized.

All evaluation methods broadcast: ``x`` may be a single point of shape (D,)
or a batch of shape (N, D).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError

__all__ = [
    "EnergyFunction",
    "CallableEnergy",
    "GmmEnergy",
    "NoiseSchedule",
    "linear_schedule",
    "DiffusedEnergyFamily",
    "DiffusedGmm",
    "diffuse_gmm",
    "eps_from_score",
    "score_from_eps",
    "gmm_to_json",
    "gmm_from_json",
    "schedule_to_json",
    "schedule_from_json",
]


def _as_batch(x, dim):
    """Return (array of shape (N, dim), was_single_point)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise DimensionMismatchError(
                f"point has dimension {arr.shape[0]}, energy expects {dim}"
            )
        return arr[None, :], True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise DimensionMismatchError(
                f"batch has dimension {arr.shape[1]}, energy expects {dim}"
            )
        return arr, False
    raise DimensionMismatchError(f"expected (D,) or (N, D) array, got shape {arr.shape}")


def logsumexp(a, axis=-1):
    """Max-shifted log-sum-exp; stable for energies well past exp overflow."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


class EnergyFunction:
    """Scalar energy E(x) with gradient, on points in R^D.

    Subclasses implement ``energy`` and ``grad``; both accept (D,) or (N, D)
    arrays and return matching scalar/(N,) and (D,)/(N, D) shapes.  Instances
    are immutable after construction and safe to share across chains.
    """

    dim: int

    def energy(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError


class CallableEnergy(EnergyFunction):
    """Wrap plain (batched) callables as an EnergyFunction."""

    def __init__(self, dim, energy_fn, grad_fn):
        self.dim = int(dim)
        self._energy_fn = energy_fn
        self._grad_fn = grad_fn

    def energy(self, x):
        xb, single = _as_batch(x, self.dim)
        e = np.asarray(self._energy_fn(xb), dtype=float)
        return float(e[0]) if single else e

    def grad(self, x):
        xb, single = _as_batch(x, self.dim)
        g = np.asarray(self._grad_fn(xb), dtype=float)
        return g[0] if single else g


class GmmEnergy(EnergyFunction):
    """Normalized isotropic Gaussian-mixture energy E(x) = -log sum_k w_k N(x; mu_k, s2_k I).

    The analytic stand-in for learned component distributions: closed-form
    energy, gradient and forward-diffused counterparts at every noise level.
    """

    def __init__(self, weights, means, variances):
        weights = np.asarray(weights, dtype=float)
        means = np.atleast_2d(np.asarray(means, dtype=float))
        variances = np.asarray(variances, dtype=float)
        if weights.ndim != 1 or means.ndim != 2 or variances.ndim != 1:
            raise ConfigError("weights and variances must be 1-D, means 2-D (K, D)")
        k = weights.shape[0]
        if means.shape[0] != k or variances.shape[0] != k:
            raise ConfigError("weights, means and variances must share length K")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigError("weights must be nonnegative and sum to 1 within 1e-12")
        if np.any(variances <= 0):
            raise ConfigError("variances must be positive")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise ConfigError("means and variances must be finite")
        self.weights = weights
        self.means = means
        self.variances = variances
        self.dim = means.shape[1]
        # per-component log constant: log w_k - D/2 log(2 pi s2_k)
        self._logconst = np.log(np.maximum(weights, 1e-300)) - 0.5 * self.dim * np.log(
            2.0 * np.pi * variances
        )

    def _comp_logdens(self, xb):
        # (N, K) component log densities including mixture weight
        diff = xb[:, None, :] - self.means[None, :, :]
        ss = np.sum(diff * diff, axis=2)
        return self._logconst[None, :] - 0.5 * ss / self.variances[None, :], diff

    def energy(self, x):
        xb, single = _as_batch(x, self.dim)
        comp, _ = self._comp_logdens(xb)
        e = -logsumexp(comp, axis=1)
        return float(e[0]) if single else e

    def grad(self, x):
        xb, single = _as_batch(x, self.dim)
        comp, diff = self._comp_logdens(xb)
        m = np.max(comp, axis=1, keepdims=True)
        r = np.exp(comp - m)
        r /= np.sum(r, axis=1, keepdims=True)
        g = np.sum(r[:, :, None] * diff / self.variances[None, :, None], axis=1)
        return g[0] if single else g

    def logpdf(self, x):
        e = self.energy(x)
        return -e

    def sample(self, n, rng):
        """Exact draws: component choice then Gaussian."""
        ks = rng.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[ks] + np.sqrt(self.variances[ks])[:, None] * eps

    def variance_total(self):
        """Scalar total variance (trace of covariance / D) of the mixture."""
        mean = np.sum(self.weights[:, None] * self.means, axis=0)
        second = np.sum(
            self.weights * (self.variances + np.sum(self.means**2, axis=1) / self.dim)
        )
        return second - np.sum(mean**2) / self.dim


def gaussian_energy(mean, variance):
    """Single-component GmmEnergy convenience."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return GmmEnergy([1.0], mean[None, :], [float(variance)])


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-diffusion variance schedule.

    ``beta`` holds beta_1..beta_T (length T); ``alpha_bar`` holds the running
    product indexed 0..T with alpha_bar[0] = 1.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ConfigError("all beta_t must lie in (0, 1)")
        if self.alpha_bar[0] != 1.0:
            raise ConfigError("alpha_bar[0] must be 1")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    @property
    def T(self):
        return len(self.beta)

    def beta_at(self, t):
        if not 1 <= t <= self.T:
            raise ConfigError(f"level t={t} outside 1..{self.T}")
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t):
        if not 0 <= t <= self.T:
            raise ConfigError(f"level t={t} outside 0..{self.T}")
        return float(self.alpha_bar[t])

    @staticmethod
    def from_betas(beta):
        beta = np.asarray(beta, dtype=float)
        alpha = 1.0 - beta
        alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
        return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def linear_schedule(T, beta_start, beta_end):
    """Linearly interpolated beta_t, endpoints inclusive."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError("need 0 < beta_start <= beta_end < 1")
    if T == 1:
        beta = np.array([beta_start])
    else:
        beta = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule.from_betas(beta)


class DiffusedEnergyFamily:
    """Noise-level-indexed energies E(x, t) for t = 0..T.

    ``min_level`` is 0 when the family has an exact data-level slice (analytic
    families) and 1 for learned denoisers whose t=0 score is undefined.
    Subclasses provide ``level_grad`` and, when available, ``level_energy``.
    """

    schedule: NoiseSchedule
    dim: int
    min_level = 0
    has_energy = True

    def level_energy(self, x, t):
        raise NotImplementedError

    def level_grad(self, x, t):
        raise NotImplementedError

    def eps(self, x, t):
        """Denoiser view: eps(x, t) = sqrt(1 - alpha_bar_t) * grad E(x, t)."""
        if not 1 <= t <= self.schedule.T:
            raise ConfigError(f"level t={t} outside 1..{self.schedule.T}")
        c = np.sqrt(1.0 - self.schedule.alpha_bar_at(t))
        return c * self.level_grad(x, t)

    def level_as_energy(self, t):
        """The level-t slice as a standalone EnergyFunction."""
        return CallableEnergy(
            self.dim,
            lambda xb, t=t: self.level_energy(xb, t),
            lambda xb, t=t: self.level_grad(xb, t),
        )


class DiffusedGmm(DiffusedEnergyFamily):
    """Closed-form diffusion of a GmmEnergy.

    Under the forward kernel N(sqrt(abar_t) x0, (1 - abar_t) I) the level-t
    marginal of a mixture stays a mixture: means sqrt(abar_t) mu_k and
    variances abar_t s2_k + (1 - abar_t).
    """

    def __init__(self, gmm, schedule):
        self.base = gmm
        self.schedule = schedule
        self.dim = gmm.dim
        self._levels = []
        for t in range(schedule.T + 1):
            ab = schedule.alpha_bar_at(t)
            if t == 0:
                self._levels.append(gmm)
            else:
                self._levels.append(
                    GmmEnergy(
                        gmm.weights,
                        np.sqrt(ab) * gmm.means,
                        ab * gmm.variances + (1.0 - ab),
                    )
                )

    def level_gmm(self, t):
        if not 0 <= t <= self.schedule.T:
            raise ConfigError(f"level t={t} outside 0..{self.schedule.T}")
        return self._levels[t]

    def level_energy(self, x, t):
        return self.level_gmm(t).energy(x)

    def level_grad(self, x, t):
        return self.level_gmm(t).grad(x)


def diffuse_gmm(gmm, schedule):
    """Closed-form diffused family for a Gaussian mixture."""
    return DiffusedGmm(gmm, schedule)


def eps_from_score(family, x, t):
    """Denoiser output from the level-t energy gradient."""
    return family.eps(x, t)


def score_from_eps(eps_value, schedule, t):
    """Invert ``eps_from_score``: grad E(x, t) = eps / sqrt(1 - alpha_bar_t)."""
    return np.asarray(eps_value) / np.sqrt(1.0 - schedule.alpha_bar_at(t))


# --- JSON serialization (fields fixed: weights/means/variances, T/beta_start/beta_end)


def gmm_to_json(gmm):
    return {
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "variances": gmm.variances.tolist(),
    }


def gmm_from_json(obj):
    if isinstance(obj, str):
        obj = json.loads(obj)
    return GmmEnergy(obj["weights"], obj["means"], obj["variances"])


def schedule_to_json(schedule, beta_start=None, beta_end=None):
    return {
        "T": schedule.T,
        "beta_start": float(schedule.beta[0]) if beta_start is None else beta_start,
        "beta_end": float(schedule.beta[-1]) if beta_end is None else beta_end,
    }


def schedule_from_json(obj):
    if isinstance(obj, str):
        obj = json.loads(obj)
    return linear_schedule(int(obj["T"]), float(obj["beta_start"]), float(obj["beta_end"]))
