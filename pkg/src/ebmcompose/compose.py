"""Operator algebra over energies: weighted products, mixtures, negation.

A product of component densities exp(-E_i) is the new energy sum_i w_i E_i;
a mixture is -log sum_i w_i exp(-E_i); negation subtracts a scaled energy.
Composed energies are unnormalized: downstream consumers must not assume the
density integrates to 1.

``compose_diffused`` applies an operator tree level by level to diffused
families.  The level-t slice of the result is the operator applied to the
children's level-t energies, which for t > 0 is NOT the diffusion of the
composed base distribution; only the t=0 slice equals the composed target.
Annealed MCMC over the level sequence corrects for this, one-shot reverse
sampling does not (see samplers.naive_reverse_on_composed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .energies import CallableEnergy, DiffusedEnergyFamily, EnergyFunction, _as_batch, logsumexp
from .errors import CompositionError, DimensionMismatchError

__all__ = [
    "product_energy",
    "mixture_energy",
    "negation_energy",
    "compose_diffused",
    "CompositionSpec",
    "spec_to_json",
    "spec_from_json",
]


def _check_terms(terms):
    if len(terms) == 0:
        raise CompositionError("composition needs at least one term")
    dims = {e.dim for e, _ in terms}
    if len(dims) != 1:
        raise DimensionMismatchError(f"terms disagree on dimension: {sorted(dims)}")
    return dims.pop()


class ProductEnergy(EnergyFunction):
    """E(x) = sum_i w_i E_i(x); the energy of the weighted product density."""

    def __init__(self, terms):
        self.dim = _check_terms(terms)
        if any(w <= 0 for _, w in terms):
            raise CompositionError("product weights must be positive")
        self.terms = tuple((e, float(w)) for e, w in terms)

    def energy(self, x):
        return sum(w * e.energy(x) for e, w in self.terms)

    def grad(self, x):
        return sum(w * e.grad(x) for e, w in self.terms)


class MixtureEnergy(EnergyFunction):
    """E(x) = -log sum_i w_i exp(-E_i(x)) with max-shifted log-sum-exp."""

    def __init__(self, terms):
        self.dim = _check_terms(terms)
        w = np.array([wi for _, wi in terms], dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise CompositionError("mixture weights must form a probability vector")
        self.terms = tuple((e, float(wi)) for e, wi in terms)
        self._logw = np.log(np.maximum(w, 1e-300))

    def _comp(self, xb):
        # (N, n_terms) log of w_i exp(-E_i)
        return np.stack(
            [lw - e.energy(xb) for (e, _), lw in zip(self.terms, self._logw)], axis=1
        )

    def energy(self, x):
        xb, single = _as_batch(x, self.dim)
        e = -logsumexp(self._comp(xb), axis=1)
        return float(e[0]) if single else e

    def grad(self, x):
        xb, single = _as_batch(x, self.dim)
        comp = self._comp(xb)
        m = np.max(comp, axis=1, keepdims=True)
        r = np.exp(comp - m)
        r /= np.sum(r, axis=1, keepdims=True)
        g = sum(r[:, i : i + 1] * e.grad(xb) for i, (e, _) in enumerate(self.terms))
        return g[0] if single else g


class NegationEnergy(EnergyFunction):
    """E(x) = E_base(x) - alpha * E_negated(x)."""

    def __init__(self, base, negated, alpha):
        self.dim = _check_terms([(base, 1.0), (negated, 1.0)])
        if alpha < 0:
            raise CompositionError("negation exponent alpha must be >= 0")
        self.base = base
        self.negated = negated
        self.alpha = float(alpha)

    def energy(self, x):
        return self.base.energy(x) - self.alpha * self.negated.energy(x)

    def grad(self, x):
        return self.base.grad(x) - self.alpha * self.negated.grad(x)


def product_energy(terms):
    """Weighted product of component densities as a single energy.

    ``terms`` is a list of (EnergyFunction, weight) with positive weights;
    weight 1 on every term recovers the plain product.
    """
    return ProductEnergy(terms)


def mixture_energy(terms):
    """Mixture of component densities; weights must sum to 1."""
    return MixtureEnergy(terms)


def _curvature_probe(energy, dim, n_dirs=8, radii=(5.0, 10.0, 20.0), h=1e-2, seed=7):
    """Directional second differences at far-field probe points.

    Detects concave directions of the composed energy, which on the Gaussian
    testbed means a non-integrable (negative-precision) composition.
    """
    rng = np.random.default_rng(seed)
    dirs = [np.eye(dim)[i] for i in range(dim)]
    extra = rng.standard_normal((n_dirs, dim))
    dirs += list(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    worst = np.inf
    for u in dirs:
        for r in radii:
            x = r * u
            second = (
                energy.energy(x + h * u) - 2.0 * energy.energy(x) + energy.energy(x - h * u)
            ) / (h * h)
            worst = min(worst, second)
    return worst


def negation_energy(base, negated, alpha, validate=True):
    """Down-weight one distribution inside another: E_base - alpha * E_neg.

    alpha = 0 is allowed as a testing boundary (returns the base unchanged in
    value).  With ``validate`` the construction probes far-field curvature and
    rejects compositions that are non-integrable on the Gaussian testbed.
    """
    out = NegationEnergy(base, negated, alpha)
    if validate and alpha > 0:
        worst = _curvature_probe(out, out.dim)
        if not np.isfinite(worst) or worst <= 1e-9:
            raise CompositionError(
                f"negation with alpha={alpha} has non-positive far-field curvature "
                f"({worst:.3g}); the composed density is not integrable"
            )
    return out


@dataclass(frozen=True)
class CompositionSpec:
    """Operator tree over registered energy families.

    op is one of product / mixture / negation / leaf.  Product weights are
    per-child positive reals, mixture weights a probability vector, negation
    has exactly two children (base, negated) with weights (w_base, alpha).
    Leaves carry a ``ref`` name resolved against a registry at build time.
    """

    op: str
    children: tuple = ()
    weights: tuple = ()
    ref: str | None = None

    def __post_init__(self):
        if self.op not in ("product", "mixture", "negation", "leaf"):
            raise CompositionError(f"unknown op {self.op!r}")
        if self.op == "leaf":
            if self.ref is None:
                raise CompositionError("leaf node needs a ref name")
        else:
            if len(self.children) == 0:
                raise CompositionError(f"{self.op} node needs children")
            if self.op == "negation" and len(self.children) != 2:
                raise CompositionError("negation takes exactly two children")
            if len(self.weights) != len(self.children):
                raise CompositionError("need one weight per child")

    def leaf_refs(self):
        if self.op == "leaf":
            return [self.ref]
        out = []
        for c in self.children:
            out.extend(c.leaf_refs())
        return out

    def build_energy(self, registry):
        """Instantiate the tree over single-level EnergyFunctions."""
        if self.op == "leaf":
            if self.ref not in registry:
                raise CompositionError(f"unresolved leaf reference {self.ref!r}")
            return registry[self.ref]
        kids = [c.build_energy(registry) for c in self.children]
        if self.op == "product":
            return product_energy(list(zip(kids, self.weights)))
        if self.op == "mixture":
            return mixture_energy(list(zip(kids, self.weights)))
        return negation_energy(kids[0], kids[1], self.weights[1])


def spec_to_json(spec):
    obj = {"op": spec.op}
    if spec.op == "leaf":
        obj["ref"] = spec.ref
    else:
        obj["weights"] = list(spec.weights)
        obj["children"] = [spec_to_json(c) for c in spec.children]
    return obj


def spec_from_json(obj):
    if isinstance(obj, str):
        obj = json.loads(obj)
    if obj["op"] == "leaf":
        return CompositionSpec(op="leaf", ref=obj["ref"])
    return CompositionSpec(
        op=obj["op"],
        children=tuple(spec_from_json(c) for c in obj["children"]),
        weights=tuple(float(w) for w in obj["weights"]),
    )


class ComposedFamily(DiffusedEnergyFamily):
    """Level-wise application of a CompositionSpec to diffused families."""

    def __init__(self, families, spec):
        refs = spec.leaf_refs()
        if isinstance(families, dict):
            registry = families
        else:
            registry = {r: f for r, f in zip(refs, families)}
            if len(refs) != len(families):
                raise CompositionError(
                    f"spec has {len(refs)} leaves but {len(families)} families given"
                )
        missing = [r for r in refs if r not in registry]
        if missing:
            raise CompositionError(f"unresolved family references: {missing}")
        fams = [registry[r] for r in refs]
        sched = fams[0].schedule
        for f in fams[1:]:
            if f.schedule.T != sched.T or not np.array_equal(f.schedule.beta, sched.beta):
                raise CompositionError("all composed families must share one noise schedule")
        self.schedule = sched
        self.dim = fams[0].dim
        self.spec = spec
        self.registry = registry
        self.min_level = max(f.min_level for f in fams)
        self.has_energy = all(f.has_energy for f in fams)
        self._level_cache = {}

    def level_as_energy(self, t):
        if t not in self._level_cache:
            slice_registry = {r: f.level_as_energy(t) for r, f in self.registry.items()}
            self._level_cache[t] = self.spec.build_energy(slice_registry)
        return self._level_cache[t]

    def level_energy(self, x, t):
        if not self.has_energy:
            raise CompositionError("a composed child exposes scores only, no energies")
        return self.level_as_energy(t).energy(x)

    def level_grad(self, x, t):
        if self.has_energy:
            return self.level_as_energy(t).grad(x)
        # score-only children: gradients still compose for product trees
        return self._grad_scores(self.spec, x, t)

    def _grad_scores(self, spec, x, t):
        if spec.op == "leaf":
            return self.registry[spec.ref].level_grad(x, t)
        if spec.op == "product":
            return sum(
                w * self._grad_scores(c, x, t) for c, w in zip(spec.children, spec.weights)
            )
        if spec.op == "negation":
            return self._grad_scores(spec.children[0], x, t) - spec.weights[1] * self._grad_scores(
                spec.children[1], x, t
            )
        raise CompositionError("mixture composition of score-only families needs energies")


def compose_diffused(families, spec):
    """Compose diffused families level by level according to ``spec``.

    The returned family's level-t energy applies the operator tree to the
    children's level-t energies.  For t > 0 this differs from diffusing the
    composed base distribution; sampling it therefore requires the annealed
    MCMC procedure rather than one reverse step per level.
    """
    if isinstance(spec, str):
        spec = spec_from_json(spec)
    return ComposedFamily(families, spec)


def product_families(families, weights=None):
    """Convenience: level-wise weighted product of the given families."""
    weights = [1.0] * len(families) if weights is None else list(weights)
    names = [f"f{i}" for i in range(len(families))]
    spec = CompositionSpec(
        op="product",
        children=tuple(CompositionSpec(op="leaf", ref=n) for n in names),
        weights=tuple(weights),
    )
    return ComposedFamily(dict(zip(names, families)), spec)


def mixture_families(families, weights):
    """Convenience: level-wise mixture of the given families."""
    names = [f"f{i}" for i in range(len(families))]
    spec = CompositionSpec(
        op="mixture",
        children=tuple(CompositionSpec(op="leaf", ref=n) for n in names),
        weights=tuple(weights),
    )
    return ComposedFamily(dict(zip(names, families)), spec)
