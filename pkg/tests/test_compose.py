"""Composition operators against precision-algebra and quadrature oracles."""

import json

import numpy as np
import pytest
from conftest import fd_grad, gaussian_product_1d, mixture_density_direct, quad_integral

from ebmcompose import (
    CompositionError,
    CompositionSpec,
    GmmEnergy,
    compose_diffused,
    diffuse_gmm,
    gaussian_energy,
    linear_schedule,
    mixture_energy,
    negation_energy,
    product_energy,
    spec_from_json,
    spec_to_json,
)
from ebmcompose.compose import product_families
from ebmcompose.metrics import grid_density_1d


def normal_energy_1d(x, mean, var):
    return (x - mean) ** 2 / (2 * var) + 0.5 * np.log(2 * np.pi * var)


# --- product


def test_product_of_two_standard_normals_offsets_by_constant():
    e = product_energy([(gaussian_energy(0.0, 1.0), 1.0), (gaussian_energy(0.0, 1.0), 1.0)])
    target_mean, target_var = gaussian_product_1d([(0.0, 1.0, 1.0), (0.0, 1.0, 1.0)])
    assert (target_mean, target_var) == (0.0, 0.5)
    xs = np.linspace(-3, 3, 11)
    diff = e.energy(xs[:, None]) - normal_energy_1d(xs, target_mean, target_var)
    np.testing.assert_allclose(diff, diff[0], rtol=1e-12)


def test_product_of_shifted_normals_is_centered_half_variance():
    e = product_energy([(gaussian_energy(-1.0, 1.0), 1.0), (gaussian_energy(1.0, 1.0), 1.0)])
    mean, var = gaussian_product_1d([(-1.0, 1.0, 1.0), (1.0, 1.0, 1.0)])
    assert mean == pytest.approx(0.0) and var == pytest.approx(0.5)
    dens = grid_density_1d(e, -8.0, 8.0)
    xs = np.linspace(-2, 2, 41)
    expected = np.exp(-normal_energy_1d(xs, mean, var))
    np.testing.assert_allclose(dens(xs), expected, rtol=1e-10, atol=1e-12)


def test_single_term_product_is_identity(rng):
    g = GmmEnergy([0.4, 0.6], [[-1.0], [2.0]], [0.5, 1.5])
    e = product_energy([(g, 1.0)])
    xs = rng.normal(size=(6, 1))
    np.testing.assert_array_equal(e.energy(xs), g.energy(xs))
    np.testing.assert_array_equal(e.grad(xs), g.grad(xs))


def test_product_rejects_empty_and_mismatched():
    with pytest.raises(CompositionError):
        product_energy([])
    with pytest.raises(Exception):
        product_energy([(gaussian_energy(0.0, 1.0), 1.0), (gaussian_energy([0.0, 0.0], 1.0), 1.0)])
    with pytest.raises(CompositionError):
        product_energy([(gaussian_energy(0.0, 1.0), -1.0)])


def test_weighted_product_matches_precision_algebra(rng):
    # tempering weights: N(m, v)^w has precision w/v
    for _ in range(5):
        terms = [
            (float(rng.normal()), float(rng.random() + 0.3), float(rng.random() * 2 + 0.2))
            for _ in range(3)
        ]
        e = product_energy([(gaussian_energy(m, v), w) for m, v, w in terms])
        mean, var = gaussian_product_1d(terms)
        dens = grid_density_1d(e, mean - 10, mean + 10)
        xs = np.linspace(mean - 2, mean + 2, 21)
        np.testing.assert_allclose(
            dens(xs), np.exp(-normal_energy_1d(xs, mean, var)), rtol=1e-9, atol=1e-12
        )


def test_gradient_additivity_exact(rng):
    gs = [GmmEnergy([1.0], [[float(rng.normal())]], [float(rng.random() + 0.3)]) for _ in range(4)]
    ws = [0.5, 1.0, 2.0, 0.25]
    e = product_energy(list(zip(gs, ws)))
    xs = rng.normal(size=(8, 1))
    manual = sum(w * g.grad(xs) for g, w in zip(gs, ws))
    np.testing.assert_allclose(e.grad(xs), manual, rtol=0, atol=1e-12)


# --- mixture


def test_mixture_of_identical_components_is_component():
    g = GmmEnergy([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0])
    e = mixture_energy([(g, 0.5), (g, 0.5)])
    xs = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(e.energy(xs), g.energy(xs), rtol=1e-14)


def test_single_component_mixture_identity():
    g = gaussian_energy(0.3, 0.7)
    e = mixture_energy([(g, 1.0)])
    xs = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(e.energy(xs), g.energy(xs), rtol=1e-14)
    np.testing.assert_allclose(e.grad(xs), g.grad(xs), rtol=1e-12)


def test_mixture_energy_matches_quadrature_oracle():
    e = mixture_energy([(gaussian_energy(-2.0, 1.0), 0.5), (gaussian_energy(2.0, 1.0), 0.5)])
    w, m, v = [0.5, 0.5], [-2.0, 2.0], [1.0, 1.0]
    assert quad_integral(lambda x: mixture_density_direct(x, w, m, v)) == pytest.approx(
        1.0, abs=1e-3
    )
    expected = -np.log(mixture_density_direct(0.0, w, m, v)[0])
    assert e.energy(np.array([0.0])) == pytest.approx(expected, rel=1e-12)


def test_mixture_grad_matches_finite_differences(rng):
    comps = [gaussian_energy(-1.0, 0.5), gaussian_energy(1.5, 1.2), gaussian_energy(0.0, 2.0)]
    e = mixture_energy([(c, w) for c, w in zip(comps, [0.2, 0.5, 0.3])])
    for _ in range(6):
        x = rng.normal(size=1) * 2
        np.testing.assert_allclose(e.grad(x), fd_grad(e.energy, x), rtol=1e-4, atol=1e-8)


def test_equal_weight_mixture_lse_bounds(rng):
    # min_i E_i <= E_mix <= min_i E_i + log n for weights 1/n
    comps = [gaussian_energy(float(rng.normal() * 2), float(rng.random() + 0.2)) for _ in range(4)]
    e = mixture_energy([(c, 0.25) for c in comps])
    xs = rng.normal(size=(50, 1)) * 3
    emix = e.energy(xs)
    emin = np.min(np.stack([c.energy(xs) for c in comps], axis=1), axis=1)
    assert np.all(emix >= emin - 1e-12)
    assert np.all(emix <= emin + np.log(4) + 1e-12)


def test_mixture_weights_must_normalize():
    with pytest.raises(CompositionError):
        mixture_energy([(gaussian_energy(0.0, 1.0), 0.5), (gaussian_energy(1.0, 1.0), 0.2)])


# --- negation


def test_negation_alpha_zero_is_base():
    base = gaussian_energy(0.0, 1.0)
    e = negation_energy(base, gaussian_energy(1.0, 2.0), 0.0)
    xs = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_array_equal(e.energy(xs), base.energy(xs))


def test_negation_precision_algebra():
    # N(0,1) minus 0.5*N(0,2): precision 1 - 0.5*0.5 = 0.75 -> N(0, 4/3)
    e = negation_energy(gaussian_energy(0.0, 1.0), gaussian_energy(0.0, 2.0), 0.5)
    mean, var = gaussian_product_1d([(0.0, 1.0, 1.0), (0.0, 2.0, -0.5)])
    assert var == pytest.approx(4.0 / 3.0)
    dens = grid_density_1d(e, -12.0, 12.0)
    xs = np.linspace(-2, 2, 21)
    np.testing.assert_allclose(
        dens(xs), np.exp(-normal_energy_1d(xs, 0.0, var)), rtol=1e-9
    )


def test_negation_detects_non_integrable():
    with pytest.raises(CompositionError):
        negation_energy(gaussian_energy(0.0, 1.0), gaussian_energy(0.0, 1.0), 2.0)


# --- composed diffused families


def make_pair():
    sched = linear_schedule(6, 0.05, 0.3)
    f1 = diffuse_gmm(gaussian_energy(-1.0, 1.0), sched)
    f2 = diffuse_gmm(gaussian_energy(1.0, 1.0), sched)
    return sched, f1, f2


def test_composed_t0_slice_equals_product_of_bases():
    _, f1, f2 = make_pair()
    fam = product_families([f1, f2])
    direct = product_energy([(f1.level_gmm(0), 1.0), (f2.level_gmm(0), 1.0)])
    xs = np.linspace(-2, 2, 11)[:, None]
    np.testing.assert_allclose(fam.level_energy(xs, 0), direct.energy(xs), rtol=1e-14)


def test_product_of_diffused_standard_normals_has_precision_two_everywhere():
    sched = linear_schedule(6, 0.05, 0.3)
    f1 = diffuse_gmm(gaussian_energy(0.0, 1.0), sched)
    f2 = diffuse_gmm(gaussian_energy(0.0, 1.0), sched)
    fam = product_families([f1, f2])
    xs = np.linspace(-3, 3, 31)
    for t in range(7):
        # every level of a diffused standard normal is standard normal
        dens = grid_density_1d(fam.level_as_energy(t), -10, 10)
        np.testing.assert_allclose(
            dens(xs), np.exp(-normal_energy_1d(xs, 0.0, 0.5)), rtol=1e-9
        )


def test_product_with_uniform_energy_is_identity():
    from ebmcompose.energies import CallableEnergy, DiffusedEnergyFamily

    sched, f1, _ = make_pair()

    class UniformFamily(DiffusedEnergyFamily):
        def __init__(self, schedule):
            self.schedule = schedule
            self.dim = 1

        def level_energy(self, x, t):
            x = np.atleast_2d(x)
            return np.zeros(x.shape[0])

        def level_grad(self, x, t):
            return np.zeros_like(np.atleast_2d(x))

    fam = product_families([f1, UniformFamily(sched)])
    xs = np.linspace(-2, 2, 9)[:, None]
    for t in (0, 3, 6):
        np.testing.assert_allclose(fam.level_energy(xs, t), f1.level_energy(xs, t), rtol=1e-14)


def test_schedule_mismatch_rejected():
    sched1 = linear_schedule(6, 0.05, 0.3)
    sched2 = linear_schedule(7, 0.05, 0.3)
    f1 = diffuse_gmm(gaussian_energy(0.0, 1.0), sched1)
    f2 = diffuse_gmm(gaussian_energy(0.0, 1.0), sched2)
    with pytest.raises(CompositionError):
        product_families([f1, f2])


# --- spec trees


def test_spec_json_round_trip():
    spec = CompositionSpec(
        op="product",
        children=(
            CompositionSpec(op="leaf", ref="a"),
            CompositionSpec(
                op="mixture",
                children=(CompositionSpec(op="leaf", ref="b"), CompositionSpec(op="leaf", ref="c")),
                weights=(0.3, 0.7),
            ),
        ),
        weights=(1.0, 2.0),
    )
    blob = json.dumps(spec_to_json(spec))
    assert spec_from_json(blob) == spec
    assert spec.leaf_refs() == ["a", "b", "c"]


def test_spec_build_energy_matches_manual():
    spec = spec_from_json(
        json.dumps(
            {
                "op": "product",
                "weights": [1.0, 1.0],
                "children": [{"op": "leaf", "ref": "p"}, {"op": "leaf", "ref": "q"}],
            }
        )
    )
    reg = {"p": gaussian_energy(-1.0, 1.0), "q": gaussian_energy(1.0, 1.0)}
    built = spec.build_energy(reg)
    manual = product_energy([(reg["p"], 1.0), (reg["q"], 1.0)])
    xs = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_array_equal(built.energy(xs), manual.energy(xs))


def test_spec_validation():
    with pytest.raises(CompositionError):
        CompositionSpec(op="divide")
    with pytest.raises(CompositionError):
        CompositionSpec(op="leaf")
    with pytest.raises(CompositionError):
        CompositionSpec(
            op="negation",
            children=(CompositionSpec(op="leaf", ref="a"),),
            weights=(1.0,),
        )


def test_compose_diffused_from_json_spec():
    sched, f1, f2 = make_pair()
    blob = json.dumps(
        {
            "op": "product",
            "weights": [1.0, 1.0],
            "children": [{"op": "leaf", "ref": "left"}, {"op": "leaf", "ref": "right"}],
        }
    )
    fam = compose_diffused({"left": f1, "right": f2}, blob)
    xs = np.linspace(-2, 2, 9)[:, None]
    expect = f1.level_energy(xs, 3) + f2.level_energy(xs, 3)
    np.testing.assert_allclose(fam.level_energy(xs, 3), expect, rtol=1e-14)
