"""Tiny trainable denoiser networks fitted by denoising score matching.

The network is a fixed two-hidden-layer tanh MLP differentiated by
hand-written reverse mode, so the finite-difference gradient check is the
contract and no autodiff framework is involved.  Conditioning on the noise
level uses the simplest scheme: abar_t appended as an input feature.

Trained nets plug into the annealed sampler through ScoreFamily, which
exposes level gradients only (no energies, so ULA is the usable kernel) and
bottoms out at level 1, where the denoiser is still defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .energies import DiffusedEnergyFamily
from .errors import ConfigError, TrainingError

__all__ = [
    "ScoreNet",
    "TrainConfig",
    "Dataset2D",
    "dsm_loss",
    "backprop_grads",
    "train",
    "ScoreFamily",
    "net_to_json",
    "net_from_json",
]


class ScoreNet:
    """eps-prediction MLP: input (x, abar_t) of size D+1, output size D.

    Parameters live in ``params`` as W1/b1, W2/b2, W3/b3 with column-major
    layer convention (inputs @ W + b).
    """

    def __init__(self, dim, hidden=64, seed=0):
        self.dim = int(dim)
        self.hidden = int(hidden)
        rng = np.random.default_rng(seed)
        d_in = self.dim + 1

        def glorot(n_in, n_out):
            s = np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-s, s, size=(n_in, n_out))

        self.params = {
            "W1": glorot(d_in, hidden),
            "b1": np.zeros(hidden),
            "W2": glorot(hidden, hidden),
            "b2": np.zeros(hidden),
            "W3": glorot(hidden, self.dim),
            "b3": np.zeros(self.dim),
        }

    def copy(self):
        out = ScoreNet.__new__(ScoreNet)
        out.dim = self.dim
        out.hidden = self.hidden
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out

    def _stack(self, x, abar):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ab = np.broadcast_to(np.asarray(abar, dtype=float), (x.shape[0],))
        return np.concatenate([x, ab[:, None]], axis=1)

    def forward(self, x, abar):
        z = self._stack(x, abar)
        p = self.params
        h1 = np.tanh(z @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        return h2 @ p["W3"] + p["b3"]

    def forward_cached(self, x, abar):
        z = self._stack(x, abar)
        p = self.params
        h1 = np.tanh(z @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        out = h2 @ p["W3"] + p["b3"]
        return out, (z, h1, h2)

    def backward(self, residual_grad, cache):
        """Reverse mode from d(loss)/d(out) back to every parameter."""
        z, h1, h2 = cache
        p = self.params
        r = residual_grad
        grads = {}
        grads["W3"] = h2.T @ r
        grads["b3"] = r.sum(axis=0)
        d2 = (r @ p["W3"].T) * (1.0 - h2 * h2)
        grads["W2"] = h1.T @ d2
        grads["b2"] = d2.sum(axis=0)
        d1 = (d2 @ p["W2"].T) * (1.0 - h1 * h1)
        grads["W1"] = z.T @ d1
        grads["b1"] = d1.sum(axis=0)
        return grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 300
    seed: int = 0
    hidden: int = 64
    optimizer: str = "adam"  # or "sgd"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("hyperparameters must be positive (epochs may be 0)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")


@dataclass
class Dataset2D:
    """Training points with a provenance tag (which generator produced them)."""

    points: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(self.points)):
            raise ConfigError("dataset contains non-finite points")

    def __len__(self):
        return self.points.shape[0]


def _draw_noise(x0, schedule, rng):
    """The DSM noise draw: levels first, then the Gaussian. Order is part of
    the contract so loss and gradients can share the draw."""
    n = x0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    abar = schedule.alpha_bar[t]
    x_t = np.sqrt(abar)[:, None] * x0 + np.sqrt(1.0 - abar)[:, None] * eps
    return x_t, abar, eps


def _loss_from_outputs(out, eps):
    diff = out - eps
    return float(np.mean(np.sum(diff * diff, axis=1)))


def dsm_loss(net, batch, schedule, rng):
    """Mean squared denoiser error over uniform levels and Gaussian noise."""
    x0 = batch.points if isinstance(batch, Dataset2D) else np.atleast_2d(batch)
    if x0.shape[0] == 0:
        raise ConfigError("empty batch")
    x_t, abar, eps = _draw_noise(x0, schedule, rng)
    out = net.forward(x_t, abar)
    return _loss_from_outputs(out, eps)


def backprop_grads(net, batch, schedule, rng):
    """Exact parameter gradients of dsm_loss at the same noise draw.

    Passing a generator in the same state as the one given to ``dsm_loss``
    reproduces that loss's draw (common random numbers).
    """
    x0 = batch.points if isinstance(batch, Dataset2D) else np.atleast_2d(batch)
    if x0.shape[0] == 0:
        raise ConfigError("empty batch")
    x_t, abar, eps = _draw_noise(x0, schedule, rng)
    out, cache = net.forward_cached(x_t, abar)
    n = x0.shape[0]
    r = 2.0 * (out - eps) / n
    grads = net.backward(r, cache)
    return _loss_from_outputs(out, eps), grads


@dataclass
class TrainResult:
    net: ScoreNet
    family: "ScoreFamily"
    curve: list  # (epoch, mean loss) pairs


def train(net, dataset, cfg, schedule):
    """Minibatch denoising-score-matching training, bit-reproducible per seed."""
    net = net.copy()
    n = len(dataset)
    if n < 1:
        raise ConfigError("dataset is empty")
    bs = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    if cfg.optimizer == "adam":
        m = {k: np.zeros_like(v) for k, v in net.params.items()}
        v = {k: np.zeros_like(v) for k, v in net.params.items()}
        beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
        step = 0
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n - bs + 1, bs):
            idx = order[start : start + bs]
            batch = Dataset2D(dataset.points[idx], tag=dataset.tag)
            loss, grads = backprop_grads(net, batch, schedule, rng)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss diverged at epoch {epoch} (loss={loss}); lower the learning rate"
                )
            losses.append(loss)
            if cfg.optimizer == "sgd":
                for k in net.params:
                    net.params[k] -= cfg.learning_rate * grads[k]
            else:
                step += 1
                for k in net.params:
                    m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
                    v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
                    mhat = m[k] / (1 - beta1**step)
                    vhat = v[k] / (1 - beta2**step)
                    net.params[k] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + adam_eps)
        curve.append((epoch, float(np.mean(losses))))
    return TrainResult(net=net, family=ScoreFamily(net, schedule), curve=curve)


class ScoreFamily(DiffusedEnergyFamily):
    """A trained denoiser as a noise-level-indexed score family.

    grad E(x, t) = net(x, abar_t) / sqrt(1 - abar_t); level 0 is undefined for
    learned denoisers, so min_level is 1 and there are no level energies.
    """

    min_level = 1
    has_energy = False

    def __init__(self, net, schedule):
        self.net = net
        self.schedule = schedule
        self.dim = net.dim

    def level_energy(self, x, t):
        raise ConfigError("learned score families expose gradients only")

    def level_grad(self, x, t):
        if not 1 <= t <= self.schedule.T:
            raise ConfigError(f"level t={t} outside 1..{self.schedule.T}")
        ab = self.schedule.alpha_bar_at(t)
        single = np.asarray(x).ndim == 1
        g = self.net.forward(x, ab) / np.sqrt(1.0 - ab)
        return g[0] if single else g


def net_to_json(net):
    """Weights as JSON: header fields dim/hidden plus the six parameter arrays."""
    return {
        "dim": net.dim,
        "hidden": net.hidden,
        "params": {k: v.tolist() for k, v in net.params.items()},
    }


def net_from_json(obj):
    if isinstance(obj, str):
        obj = json.loads(obj)
    net = ScoreNet(obj["dim"], hidden=obj["hidden"], seed=0)
    for k in net.params:
        net.params[k] = np.asarray(obj["params"][k], dtype=float)
    return net


# --- factored-vs-monolithic data-efficiency experiment


def default_factors():
    """The 2-D testbed: p1 spreads along x, p2 along y; their product is four
    tighter blobs, their mixture four broad ones."""
    from .energies import GmmEnergy

    p1 = GmmEnergy([0.5, 0.5], [[-1.5, 0.0], [1.5, 0.0]], [0.8, 0.8])
    p2 = GmmEnergy([0.5, 0.5], [[0.0, -1.5], [0.0, 1.5]], [0.8, 0.8])
    return p1, p2


def sample_product_rejection(p1, p2, n, rng):
    """Exact draws from the normalized product density via rejection.

    Proposes from p1 and accepts with p2(x) / M where M bounds p2 by the sum
    of its components' peak densities.
    """
    M = float(np.sum(p2.weights / (2.0 * np.pi * p2.variances) ** (p2.dim / 2.0)))
    out = []
    while sum(len(o) for o in out) < n:
        m = max(2 * n, 1000)
        x = p1.sample(m, rng)
        dens = np.exp(-p2.energy(x))
        keep = rng.random(m) < dens / M
        out.append(x[keep])
    return np.concatenate(out, axis=0)[:n]


def sample_mixture_exact(p1, p2, weights, n, rng):
    pick = rng.random(n) < weights[0]
    x = np.empty((n, p1.dim))
    n1 = int(pick.sum())
    x[pick] = p1.sample(n1, rng)
    x[~pick] = p2.sample(n - n1, rng)
    return x


def _sample_learned_mixture(families, weights, cfg, n):
    """Mixture of learned score families: choose a component per chain, then
    run that component's annealed chain (mixture scores are not expressible
    from component scores alone)."""
    from .compose import product_families
    from .samplers import annealed_compose_sample, chain_rng

    pick = np.array([chain_rng(cfg.seed ^ 0x5F5F, i).random() < weights[0] for i in range(n)])
    out = np.empty((n, families[0].dim))
    for fam, mask in ((families[0], pick), (families[1], ~pick)):
        k = int(mask.sum())
        if k:
            res = annealed_compose_sample(product_families([fam]), cfg, k)
            out[mask] = res.samples
    return out


def fig4_experiment(
    composition="product",
    n_grid=(250, 1000, 4000),
    n_seeds_smallest=5,
    train_cfg=None,
    schedule=None,
    sampler_cfg=None,
    n_eval=10_000,
    bins=50,
    eval_halfwidth=4.0,
):
    """Factor models on N samples each vs one monolithic model on 2N.

    For each N in ``n_grid`` (all seeds for the smallest N, one seed
    otherwise): train denoisers for the two factors on N draws apiece, train
    a monolithic denoiser on 2N draws from the composed distribution, sample
    both with the annealed ULA sampler, and score each batch with 2-D
    histogram KL against the exactly normalized composed density.  Returns
    per-run rows plus win counts for the smallest N.
    """
    from .compose import mixture_energy, product_energy, product_families
    from .energies import linear_schedule
    from .metrics import grid_density_2d, histogram_kl
    from .samplers import SamplerConfig, annealed_compose_sample

    if composition not in ("product", "mixture"):
        raise ConfigError("composition must be 'product' or 'mixture'")
    train_cfg = train_cfg or TrainConfig()
    schedule = schedule or linear_schedule(50, 1e-4, 0.05)
    p1, p2 = default_factors()
    if composition == "product":
        composed = product_energy([(p1, 1.0), (p2, 1.0)])
    else:
        composed = mixture_energy([(p1, 0.5), (p2, 0.5)])
    lo, hi = -eval_halfwidth, eval_halfwidth
    ref = grid_density_2d(composed, lo, hi)

    def draw_composed(n, rng):
        if composition == "product":
            return sample_product_rejection(p1, p2, n, rng)
        return sample_mixture_exact(p1, p2, [0.5, 0.5], n, rng)

    rows = []
    for n_train in n_grid:
        seeds = range(n_seeds_smallest) if n_train == min(n_grid) else range(1)
        for seed in seeds:
            rng = np.random.default_rng((seed, n_train, 17))
            cfg = TrainConfig(
                learning_rate=train_cfg.learning_rate,
                batch_size=train_cfg.batch_size,
                epochs=train_cfg.epochs,
                seed=seed,
                hidden=train_cfg.hidden,
                optimizer=train_cfg.optimizer,
            )
            scfg = sampler_cfg or SamplerConfig(steps_per_level=5, kernel="ula", seed=seed)
            fams = []
            for factor, tag in ((p1, "p1"), (p2, "p2")):
                data = Dataset2D(factor.sample(n_train, rng), tag=tag)
                net = ScoreNet(2, hidden=cfg.hidden, seed=seed)
                fams.append(train(net, data, cfg, schedule).family)
            if composition == "product":
                comp_samples = annealed_compose_sample(
                    product_families(fams), scfg, n_eval
                ).samples
            else:
                comp_samples = _sample_learned_mixture(fams, [0.5, 0.5], scfg, n_eval)
            mono_data = Dataset2D(draw_composed(2 * n_train, rng), tag="composed")
            mono_net = ScoreNet(2, hidden=cfg.hidden, seed=seed + 1000)
            mono_fam = train(mono_net, mono_data, cfg, schedule).family
            mono_samples = annealed_compose_sample(
                product_families([mono_fam]), scfg, n_eval
            ).samples
            kl_comp = histogram_kl(comp_samples, ref, bins=bins, hist_range=((lo, lo), (hi, hi)))
            kl_mono = histogram_kl(mono_samples, ref, bins=bins, hist_range=((lo, lo), (hi, hi)))
            rows.append(
                {
                    "composition": composition,
                    "n_train": int(n_train),
                    "seed": int(seed),
                    "kl_compositional": float(kl_comp),
                    "kl_monolithic": float(kl_mono),
                }
            )
    smallest = [r for r in rows if r["n_train"] == min(n_grid)]
    wins = sum(r["kl_compositional"] < r["kl_monolithic"] for r in smallest)
    return {
        "composition": composition,
        "rows": rows,
        "smallest_n": int(min(n_grid)),
        "compositional_wins": int(wins),
        "n_seeds_smallest": int(len(smallest)),
    }
