"""MCMC kernels on R^D and the annealed compositional sampler.

Two noise conventions are first-class config because the source material for
the fixed-level reverse kernel is ambiguous about them:

* ``standard``: Langevin noise sqrt(2 * eta) * xi, reverse-step std sqrt(beta_t).
* ``paper-literal``: Langevin noise sqrt(2) * eta * xi, reverse-step std beta_t.

Under the paper-literal pairing, one reverse step with the noise scaled by
sqrt(2) is exactly one ULA step with eta = beta_t; ``equivalence_report``
checks that identity analytically and empirically.  Correctness tests (does
the chain sample the target?) belong to the standard pairing.

Chains are independent: energies are shared read-only and every chain owns a
generator seeded from (seed, chain_index), so batches are bit-reproducible
and independent of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .energies import GmmEnergy
from .errors import ChainError, CompositionError, ConfigError

__all__ = [
    "SamplerConfig",
    "ChainState",
    "ChainRun",
    "ula_step",
    "mala_step",
    "hmc_step",
    "reverse_step",
    "run_chain",
    "annealed_compose_sample",
    "naive_reverse_on_composed",
    "equivalence_report",
    "tempering_measurement",
    "chain_rng",
]

_CONVENTIONS = ("standard", "paper-literal")
_KERNELS = ("ula", "mala", "hmc", "uhmc")


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs shared by all continuous kernels.

    ``step_size`` is eta for Langevin kernels and the leapfrog step for HMC.
    For the annealed sampler the per-level step is beta_t * step_scale.
    """

    step_size: float = 0.01
    steps_per_level: int = 5
    noise_convention: str = "standard"
    temperature: float = 1.0
    leapfrog_steps: int = 5
    kernel: str = "ula"
    step_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.steps_per_level < 1:
            raise ConfigError("steps_per_level must be >= 1")
        if self.noise_convention not in _CONVENTIONS:
            raise ConfigError(f"noise_convention must be one of {_CONVENTIONS}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.leapfrog_steps < 1:
            raise ConfigError("leapfrog_steps must be >= 1")
        if self.kernel not in _KERNELS:
            raise ConfigError(f"kernel must be one of {_KERNELS}")
        if self.step_scale <= 0:
            raise ConfigError("step_scale must be positive")

    def noise_coef(self, eta=None):
        eta = self.step_size if eta is None else eta
        if self.noise_convention == "standard":
            return np.sqrt(2.0 * eta)
        return np.sqrt(2.0) * eta


@dataclass
class ChainState:
    """One chain: current point, noise level, generator and move counters."""

    x: np.ndarray
    t: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    accepted: int = 0
    steps: int = 0
    last_accepted: bool = True

    @staticmethod
    def start(x, seed, t=0):
        return ChainState(x=np.asarray(x, dtype=float), t=t, rng=np.random.default_rng(seed))


def chain_rng(seed, chain_index):
    """Per-chain generator: seeded from the (seed, chain_index) pair."""
    return np.random.default_rng(np.random.SeedSequence((int(seed) & (2**63 - 1), chain_index)))


def _check_finite_grad(g, x):
    if not np.all(np.isfinite(g)):
        raise ChainError(f"non-finite gradient {g!r} at x={x!r}")


def ula_step(E, state, cfg):
    """One unadjusted Langevin step targeting exp(-E / temperature)."""
    g = E.grad(state.x)
    _check_finite_grad(g, state.x)
    xi = state.rng.standard_normal(state.x.shape)
    x_new = state.x - cfg.step_size * g / cfg.temperature + cfg.noise_coef() * xi
    return replace(
        state, x=x_new, accepted=state.accepted + 1, steps=state.steps + 1, last_accepted=True
    )


def _mala_logq(to, frm, g_frm, eta, inv_temp, nc):
    mean = frm - eta * inv_temp * g_frm
    return -np.sum((to - mean) ** 2, axis=-1) / (2.0 * nc * nc)


def mala_step(E, state, cfg):
    """Langevin proposal plus Metropolis correction; preserves exp(-E/T) exactly."""
    eta = cfg.step_size
    nc = cfg.noise_coef()
    inv_temp = 1.0 / cfg.temperature
    gx = E.grad(state.x)
    _check_finite_grad(gx, state.x)
    ex = E.energy(state.x)
    xi = state.rng.standard_normal(state.x.shape)
    y = state.x - eta * inv_temp * gx + nc * xi
    gy = E.grad(y)
    ey = E.energy(y)
    log_alpha = (ex - ey) * inv_temp
    log_alpha += _mala_logq(state.x, y, gy, eta, inv_temp, nc)
    log_alpha -= _mala_logq(y, state.x, gx, eta, inv_temp, nc)
    u = state.rng.random()
    accept = bool(np.isfinite(log_alpha)) and (log_alpha >= 0.0 or u < np.exp(log_alpha))
    return replace(
        state,
        x=y if accept else state.x,
        accepted=state.accepted + int(accept),
        steps=state.steps + 1,
        last_accepted=accept,
    )


def leapfrog(E, x, p, eps, L, inv_temp=1.0):
    """L leapfrog steps for H = E/T + |p|^2/2; returns (x', p', H0 - H1)."""
    h0 = E.energy(x) * inv_temp + 0.5 * np.sum(p * p)
    g = E.grad(x)
    p = p - 0.5 * eps * inv_temp * g
    for l in range(L):
        x = x + eps * p
        g = E.grad(x)
        if l < L - 1:
            p = p - eps * inv_temp * g
    p = p - 0.5 * eps * inv_temp * g
    h1 = E.energy(x) * inv_temp + 0.5 * np.sum(p * p)
    return x, p, h0 - h1


def hmc_step(E, state, cfg, metropolis=True):
    """Leapfrog HMC with unit mass; ``metropolis=False`` gives U-HMC."""
    p = state.rng.standard_normal(state.x.shape)
    u = state.rng.random()
    x, _, dh = leapfrog(E, state.x.copy(), p, cfg.step_size, cfg.leapfrog_steps,
                        1.0 / cfg.temperature)
    if not np.isfinite(dh):
        accept = False  # divergent trajectory: reject and flag
    elif metropolis:
        accept = dh >= 0.0 or u < np.exp(dh)
    else:
        accept = True
    return replace(
        state,
        x=x if accept else state.x,
        accepted=state.accepted + int(accept),
        steps=state.steps + 1,
        last_accepted=accept,
    )


def _reverse_mean(family, x, t):
    """Mean of the fixed-level reverse kernel, through the denoiser view."""
    sched = family.schedule
    beta = sched.beta_at(t)
    eps_val = family.eps(x, t)
    return x - beta / np.sqrt(1.0 - sched.alpha_bar_at(t)) * eps_val


def _reverse_std(family, t, noise_std_convention, noise_scale):
    beta = family.schedule.beta_at(t)
    if noise_std_convention == "sqrt_beta":
        return noise_scale * np.sqrt(beta)
    if noise_std_convention == "beta":
        return noise_scale * beta
    raise ConfigError("noise_std_convention must be 'sqrt_beta' or 'beta'")


def reverse_step(family, state, noise_std_convention="sqrt_beta", noise_scale=1.0):
    """Fixed-level reverse kernel: stays at level t, no 1/sqrt(alpha_t) rescale.

    x' = x - (beta_t / sqrt(1 - abar_t)) eps(x, t) + noise_scale * std * xi
    with std = sqrt(beta_t) or beta_t by convention.
    """
    t = state.t
    if not 1 <= t <= family.schedule.T:
        raise ConfigError(f"level t={t} outside 1..{family.schedule.T}")
    mean = _reverse_mean(family, state.x, t)
    std = _reverse_std(family, t, noise_std_convention, noise_scale)
    xi = state.rng.standard_normal(state.x.shape)
    return replace(state, x=mean + std * xi, accepted=state.accepted + 1, steps=state.steps + 1)


@dataclass
class ChainRun:
    samples: np.ndarray  # (n_steps, D)
    acceptance_rate: float
    n_divergent: int = 0


def run_chain(E, x0, n_steps, cfg, rng=None):
    """Run one chain of ``cfg.kernel`` for ``n_steps`` and record every state.

    Gaussian-mixture targets dispatch to the compiled kernels (pure-Python
    fallback when the extension is missing); other energies run the generic
    path.  Either way the randomness is pre-drawn from ``rng`` in a fixed
    layout, so results are reproducible per (seed, kernel, backend).
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    D = x0.shape[0]
    eta = cfg.step_size
    nc = cfg.noise_coef()
    inv_temp = 1.0 / cfg.temperature
    normals = rng.standard_normal((n_steps, D))
    if cfg.kernel == "ula":
        uniforms = None
    else:
        uniforms = rng.random(n_steps)

    if isinstance(E, GmmEnergy):
        logconst = np.ascontiguousarray(E._logconst)
        means = np.ascontiguousarray(E.means)
        inv_var = np.ascontiguousarray(1.0 / E.variances)
        if cfg.kernel == "ula":
            samples = kernels.gmm_langevin_chain(
                logconst, means, inv_var, x0, eta, nc, inv_temp, normals
            )
            return ChainRun(samples=samples, acceptance_rate=1.0)
        if cfg.kernel == "mala":
            samples, n_acc = kernels.gmm_mala_chain(
                logconst, means, inv_var, x0, eta, nc, inv_temp, normals, uniforms
            )
            return ChainRun(samples=samples, acceptance_rate=n_acc / n_steps)
        samples, n_acc, n_div = kernels.gmm_hmc_chain(
            logconst,
            means,
            inv_var,
            x0,
            eta,
            cfg.leapfrog_steps,
            inv_temp,
            normals,
            uniforms,
            cfg.kernel == "uhmc",
        )
        return ChainRun(samples=samples, acceptance_rate=n_acc / n_steps, n_divergent=n_div)

    # generic path: same updates via the energy's batched interface
    x = x0.copy()
    out = np.empty((n_steps, D))
    n_acc = 0
    n_div = 0
    if cfg.kernel == "ula":
        for i in range(n_steps):
            g = E.grad(x)
            _check_finite_grad(g, x)
            x = x - eta * inv_temp * g + nc * normals[i]
            out[i] = x
        return ChainRun(samples=out, acceptance_rate=1.0)
    if cfg.kernel == "mala":
        gx = E.grad(x)
        ex = E.energy(x)
        for i in range(n_steps):
            y = x - eta * inv_temp * gx + nc * normals[i]
            gy = E.grad(y)
            ey = E.energy(y)
            log_alpha = (ex - ey) * inv_temp
            log_alpha += _mala_logq(x, y, gy, eta, inv_temp, nc)
            log_alpha -= _mala_logq(y, x, gx, eta, inv_temp, nc)
            if np.isfinite(log_alpha) and (log_alpha >= 0.0 or uniforms[i] < np.exp(log_alpha)):
                x, gx, ex = y, gy, ey
                n_acc += 1
            out[i] = x
        return ChainRun(samples=out, acceptance_rate=n_acc / n_steps)
    for i in range(n_steps):
        xp = x.copy()
        p = normals[i].copy()
        h0 = E.energy(xp) * inv_temp + 0.5 * np.sum(p * p)
        g = E.grad(xp)
        p -= 0.5 * eta * inv_temp * g
        for l in range(cfg.leapfrog_steps):
            xp += eta * p
            g = E.grad(xp)
            if l < cfg.leapfrog_steps - 1:
                p -= eta * inv_temp * g
        p -= 0.5 * eta * inv_temp * g
        h1 = E.energy(xp) * inv_temp + 0.5 * np.sum(p * p)
        dh = h0 - h1
        if not np.isfinite(dh):
            n_div += 1
        elif cfg.kernel == "uhmc" or dh >= 0.0 or uniforms[i] < np.exp(dh):
            x = xp
            n_acc += 1
        out[i] = x
    return ChainRun(samples=out, acceptance_rate=n_acc / n_steps, n_divergent=n_div)


@dataclass
class AnnealedResult:
    samples: np.ndarray  # (n, D)
    diagnostics: dict
    failed: np.ndarray  # indices of chains that went non-finite


def _predraw(seed, n, total_steps, dim, want_uniforms):
    """Per-chain noise blocks, stacked chain-major so batching order is irrelevant."""
    init = np.empty((n, dim))
    normals = np.empty((n, total_steps, dim))
    uniforms = np.empty((n, total_steps)) if want_uniforms else None
    for i in range(n):
        g = chain_rng(seed, i)
        init[i] = g.standard_normal(dim)
        normals[i] = g.standard_normal((total_steps, dim))
        if want_uniforms:
            uniforms[i] = g.random(total_steps)
    return init, normals, uniforms


def annealed_compose_sample(family, cfg, n_samples, record_chain0=True):
    """Annealed MCMC over the level sequence of a (composed) diffused family.

    Each chain starts at N(0, I) and runs ``cfg.steps_per_level`` steps of the
    chosen kernel against exp(-E(., t)) for t = T down to the family's lowest
    level, with per-level step size beta_t * step_scale (level 0 reuses
    beta_1).  Returns the final batch plus per-level acceptance and an ESS
    diagnostic from chain 0's recorded trace.
    """
    sched = family.schedule
    T = sched.T
    K = cfg.steps_per_level
    levels = list(range(T, family.min_level - 1, -1))
    total = len(levels) * K
    D = family.dim
    needs_energy = cfg.kernel in ("mala", "hmc", "uhmc")
    if needs_energy and not family.has_energy:
        raise CompositionError(f"kernel {cfg.kernel!r} needs level energies; family has scores only")

    x, normals, uniforms = _predraw(cfg.seed, n_samples, total, D, needs_energy)
    alive = np.ones(n_samples, dtype=bool)
    acceptance = {}
    trace0 = np.empty(total) if record_chain0 else None
    inv_temp = 1.0 / cfg.temperature

    s = 0
    for t in levels:
        eta = sched.beta_at(max(t, 1)) * cfg.step_scale
        nc = cfg.noise_coef(eta)
        acc_lvl = 0
        n_prop = 0
        if needs_energy:
            ex = family.level_energy(x, t)
            gx = family.level_grad(x, t)
        for _ in range(K):
            xi = normals[:, s, :]
            if cfg.kernel == "ula":
                g = family.level_grad(x, t)
                x_new = x - eta * inv_temp * g + nc * xi
            elif cfg.kernel == "mala":
                y = x - eta * inv_temp * gx + nc * xi
                gy = family.level_grad(y, t)
                ey = family.level_energy(y, t)
                log_alpha = (ex - ey) * inv_temp
                log_alpha += _mala_logq(x, y, gy, eta, inv_temp, nc)
                log_alpha -= _mala_logq(y, x, gx, eta, inv_temp, nc)
                acc = np.isfinite(log_alpha) & (
                    np.log(np.maximum(uniforms[:, s], 1e-300)) < log_alpha
                )
                x_new = np.where(acc[:, None], y, x)
                gx = np.where(acc[:, None], gy, gx)
                ex = np.where(acc, ey, ex)
                acc_lvl += int(np.sum(acc & alive))
                n_prop += int(np.sum(alive))
            else:  # hmc / uhmc
                xp = x.copy()
                p = xi.copy()
                h0 = ex * inv_temp + 0.5 * np.sum(p * p, axis=1)
                g = gx
                p = p - 0.5 * eta * inv_temp * g
                for l in range(cfg.leapfrog_steps):
                    xp = xp + eta * p
                    g = family.level_grad(xp, t)
                    if l < cfg.leapfrog_steps - 1:
                        p = p - eta * inv_temp * g
                p = p - 0.5 * eta * inv_temp * g
                ep = family.level_energy(xp, t)
                h1 = ep * inv_temp + 0.5 * np.sum(p * p, axis=1)
                dh = h0 - h1
                if cfg.kernel == "uhmc":
                    acc = np.isfinite(dh)
                else:
                    acc = np.isfinite(dh) & (
                        np.log(np.maximum(uniforms[:, s], 1e-300)) < dh
                    )
                x_new = np.where(acc[:, None], xp, x)
                gx = np.where(acc[:, None], g, gx)
                ex = np.where(acc, ep, ex)
                acc_lvl += int(np.sum(acc & alive))
                n_prop += int(np.sum(alive))
            ok = np.all(np.isfinite(x_new), axis=1)
            alive &= ok | ~alive  # once dead, stays dead
            x = np.where((ok & alive)[:, None], x_new, x)
            if record_chain0:
                trace0[s] = x[0, 0]
            s += 1
        if cfg.kernel == "ula":
            acceptance[t] = 1.0
        else:
            acceptance[t] = acc_lvl / max(n_prop, 1)

    diagnostics = {
        "acceptance_per_level": {int(t): float(a) for t, a in acceptance.items()},
        "n_samples": int(n_samples),
        "kernel": cfg.kernel,
        "levels": len(levels),
        "steps_per_level": K,
        "n_failed": int(np.sum(~alive)),
    }
    if record_chain0:
        from .metrics import ess

        diagnostics["ess_chain0"] = float(ess(trace0)) if total >= 100 else float("nan")
    return AnnealedResult(samples=x, diagnostics=diagnostics, failed=np.flatnonzero(~alive))


def naive_reverse_on_composed(family, n, seed=0, bins=100, hist_range=None):
    """One reverse step per level on the composed score, plus a divergence report.

    This is the standard reverse pass run directly on the composed family.
    Because the level-t composed energy is not the diffusion of the composed
    base distribution, this does NOT sample the composed target; the report's
    histogram KL against the true t=0 density quantifies the gap.
    """
    sched = family.schedule
    T = sched.T
    D = family.dim
    x = np.empty((n, D))
    normals = np.empty((n, T, D))
    for i in range(n):
        g = chain_rng(seed, i)
        x[i] = g.standard_normal(D)
        normals[i] = g.standard_normal((T, D))
    for s, t in enumerate(range(T, 0, -1)):
        beta = sched.beta_at(t)
        alpha = 1.0 - beta
        eps_val = family.eps(x, t)
        mean = (x - beta / np.sqrt(1.0 - sched.alpha_bar_at(t)) * eps_val) / np.sqrt(alpha)
        if t > 1:
            x = mean + np.sqrt(beta) * normals[:, s, :]
        else:
            x = mean
    n_divergent = int(np.sum(~np.all(np.isfinite(x), axis=1)))
    report = {"n": int(n), "n_divergent": n_divergent, "bins": int(bins)}
    if D == 1 and family.has_energy:
        from .metrics import grid_density_1d, histogram_kl

        if hist_range is None:
            finite = x[np.all(np.isfinite(x), axis=1), 0]
            lo, hi = float(np.min(finite)) - 1.0, float(np.max(finite)) + 1.0
        else:
            lo, hi = hist_range
        ref = grid_density_1d(family.level_as_energy(0), lo, hi)
        report["histogram_kl"] = float(histogram_kl(x[:, 0], ref, bins=bins, hist_range=(lo, hi)))
        report["range"] = [lo, hi]
    return x, report


def equivalence_report(family, x_probe, levels, n_draws=100_000, seed=0):
    """Moments of the paper-literal reverse kernel vs ULA with eta = beta_t.

    For each level: analytic mean/std of (a) the fixed-level reverse kernel
    with std beta_t and noise scale sqrt(2), computed through the denoiser
    view, and (b) the ULA kernel under the paper-literal noise convention
    with eta = beta_t, computed through the score view; plus empirical
    one-step moments over ``n_draws`` draws of each kernel.
    """
    sched = family.schedule
    x_probe = np.atleast_1d(np.asarray(x_probe, dtype=float))
    rng = np.random.default_rng(seed)
    rows = []
    for t in levels:
        beta = sched.beta_at(t)
        mean_rev = _reverse_mean(family, x_probe, t)
        std_rev = _reverse_std(family, t, "beta", np.sqrt(2.0))
        mean_ula = x_probe - beta * family.level_grad(x_probe, t)
        std_ula = np.sqrt(2.0) * beta
        draws_rev = mean_rev[None, :] + std_rev * rng.standard_normal((n_draws, family.dim))
        draws_ula = mean_ula[None, :] + std_ula * rng.standard_normal((n_draws, family.dim))
        rows.append(
            {
                "t": int(t),
                "beta": float(beta),
                "analytic_mean_reverse": mean_rev.tolist(),
                "analytic_mean_ula": mean_ula.tolist(),
                "analytic_std_reverse": float(std_rev),
                "analytic_std_ula": float(std_ula),
                "mean_abs_diff": float(np.max(np.abs(mean_rev - mean_ula))),
                "std_abs_diff": float(abs(std_rev - std_ula)),
                "empirical_mean_reverse": draws_rev.mean(axis=0).tolist(),
                "empirical_mean_ula": draws_ula.mean(axis=0).tolist(),
                "empirical_std_reverse": float(draws_rev.std(ddof=1)),
                "empirical_std_ula": float(draws_ula.std(ddof=1)),
            }
        )
    return {"x_probe": x_probe.tolist(), "n_draws": int(n_draws), "levels": rows}


def tempering_measurement(family, level, n_chains=100, n_steps=6000, burn_in=1000, seed=0):
    """Stationary variance of the un-scaled reverse kernel on a unit-Gaussian level.

    Runs x' = x - beta * grad E_t(x) + sqrt(beta) * xi repeatedly at a fixed
    level and estimates the pooled post-burn-in variance.  Reports both the
    small-step stationarity prediction (variance 1/(2 - beta), i.e.
    temperature 1/2 as beta -> 0) and the stated temperature 1/sqrt(2) for
    comparison; the measurement arbitrates.
    """
    sched = family.schedule
    beta = sched.beta_at(level)
    D = family.dim
    x = np.empty((n_chains, D))
    noise = np.empty((n_chains, n_steps, D))
    for i in range(n_chains):
        g = chain_rng(seed, i)
        x[i] = g.standard_normal(D)
        noise[i] = g.standard_normal((n_steps, D))
    std = np.sqrt(beta)
    kept = []
    for s in range(n_steps):
        x = x - beta * family.level_grad(x, level) + std * noise[:, s, :]
        if s >= burn_in:
            kept.append(x.copy())
    pooled = np.concatenate(kept, axis=0)
    return {
        "level": int(level),
        "beta": float(beta),
        "measured_variance": float(pooled.var(ddof=1)),
        "small_step_prediction": float(1.0 / (2.0 - beta)),
        "small_step_temperature": 0.5,
        "paper_stated_temperature": float(1.0 / np.sqrt(2.0)),
        "paper_stated_variance": float(1.0 / np.sqrt(2.0)),
        "n_chains": int(n_chains),
        "n_steps": int(n_steps),
        "burn_in": int(burn_in),
    }
