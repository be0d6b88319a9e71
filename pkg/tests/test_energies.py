"""Energy core: mixture energies, schedules, closed-form diffusion."""

import json

import numpy as np
import pytest
from conftest import fd_grad, mixture_density_direct, quad_integral

from ebmcompose import (
    ConfigError,
    DimensionMismatchError,
    GmmEnergy,
    diffuse_gmm,
    eps_from_score,
    gaussian_energy,
    gmm_from_json,
    gmm_to_json,
    linear_schedule,
    schedule_from_json,
    schedule_to_json,
    score_from_eps,
)

HALF_LOG_2PI = 0.9189385332046727


def test_standard_normal_energy_at_origin():
    g = gaussian_energy(0.0, 1.0)
    assert g.energy(np.array([0.0])) == pytest.approx(HALF_LOG_2PI, abs=1e-14)


def test_energy_even_in_x():
    g = gaussian_energy(0.0, 1.0)
    assert g.energy(np.array([0.0])) == g.energy(np.array([-0.0]))
    assert g.energy(np.array([1.3])) == g.energy(np.array([-1.3]))


def test_two_mode_energy_matches_quadrature_oracle():
    w, m, v = [0.5, 0.5], [-1.0, 1.0], [1.0, 1.0]
    g = GmmEnergy(w, [[mi] for mi in m], v)
    # oracle: direct-formula density, normalization confirmed by quadrature
    total = quad_integral(lambda x: mixture_density_direct(x, w, m, v))
    assert total == pytest.approx(1.0, abs=1e-3)
    expected = -np.log(mixture_density_direct(0.0, w, m, v)[0])
    assert g.energy(np.array([0.0])) == pytest.approx(expected, rel=1e-12)


def test_gmm_energy_is_stable_far_out():
    g = GmmEnergy([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0])
    e = g.energy(np.array([60.0]))
    assert np.isfinite(e) and e > 1700  # exp(-e) would underflow; log path must not


def test_grad_of_standard_normal():
    g = gaussian_energy(0.0, 1.0)
    assert g.grad(np.array([2.0]))[0] == pytest.approx(2.0, abs=1e-14)


def test_grad_zero_at_symmetric_point():
    g = GmmEnergy([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0])
    assert g.grad(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-14)


def test_grad_matches_finite_differences(rng):
    for _ in range(10):
        k = rng.integers(1, 5)
        d = rng.integers(1, 4)
        w = rng.random(k) + 0.1
        w /= w.sum()
        g = GmmEnergy(w, rng.normal(size=(k, d)), rng.random(k) + 0.3)
        x = rng.normal(size=d) * 2
        num = fd_grad(lambda p: g.energy(p), x)
        np.testing.assert_allclose(g.grad(x), num, rtol=1e-4, atol=1e-7)


def test_dimension_mismatch_raises():
    g = gaussian_energy([0.0, 0.0], 1.0)
    with pytest.raises(DimensionMismatchError):
        g.energy(np.zeros(3))


def test_gmm_invalid_construction():
    with pytest.raises(ConfigError):
        GmmEnergy([0.6, 0.6], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(ConfigError):
        GmmEnergy([1.0], [[0.0]], [0.0])


def test_batched_evaluation_matches_pointwise(rng):
    g = GmmEnergy([0.3, 0.7], [[-1.0, 0.0], [1.0, 2.0]], [0.5, 1.2])
    xs = rng.normal(size=(9, 2))
    eb = g.energy(xs)
    gb = g.grad(xs)
    for i in range(9):
        assert eb[i] == pytest.approx(g.energy(xs[i]), rel=1e-14)
        np.testing.assert_allclose(gb[i], g.grad(xs[i]), rtol=1e-14)


# --- schedules


def test_single_level_schedule():
    s = linear_schedule(1, 0.1, 0.1)
    assert s.beta.tolist() == [0.1]
    assert s.alpha_bar_at(1) == pytest.approx(0.9, abs=1e-15)


def test_two_level_schedule_product():
    s = linear_schedule(2, 0.1, 0.3)
    assert s.alpha_bar_at(2) == pytest.approx(0.9 * 0.7, abs=1e-15)


@pytest.mark.parametrize("T,b0,b1", [(5, 0.01, 0.2), (50, 1e-4, 0.05), (1, 0.5, 0.5)])
def test_alpha_bar_strictly_decreasing(T, b0, b1):
    s = linear_schedule(T, b0, b1)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.alpha_bar_at(0) == 1.0


def test_schedule_range_validation():
    with pytest.raises(ConfigError):
        linear_schedule(0, 0.1, 0.2)
    with pytest.raises(ConfigError):
        linear_schedule(5, 0.0, 0.2)
    with pytest.raises(ConfigError):
        linear_schedule(5, 0.3, 0.2)
    with pytest.raises(ConfigError):
        linear_schedule(5, 0.3, 1.0)


# --- diffused families


def test_identity_level_equals_base():
    g = GmmEnergy([0.4, 0.6], [[-2.0], [1.0]], [0.5, 2.0])
    fam = diffuse_gmm(g, linear_schedule(10, 1e-3, 0.1))
    x = np.linspace(-3, 3, 7)[:, None]
    np.testing.assert_allclose(fam.level_energy(x, 0), g.energy(x), rtol=1e-14)


def test_pure_noise_limit_approaches_standard_normal():
    g = GmmEnergy([0.5, 0.5], [[-2.0], [2.0]], [0.5, 0.5])
    fam = diffuse_gmm(g, linear_schedule(400, 0.02, 0.05))
    T = fam.schedule.T
    assert fam.schedule.alpha_bar_at(T) < 1e-6
    std_normal = gaussian_energy(0.0, 1.0)
    x = np.linspace(-3, 3, 13)[:, None]
    np.testing.assert_allclose(fam.level_energy(x, T), std_normal.energy(x), atol=1e-4)


def test_point_mass_forward_moments():
    # near point mass at 2; at abar = 0.25 the level is N(1.0, 0.75)
    g = gaussian_energy(2.0, 1e-12)
    beta = 0.75  # single level with alpha_bar = 0.25
    fam = diffuse_gmm(g, linear_schedule(1, beta, beta))
    lvl = fam.level_gmm(1)
    assert lvl.means[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert lvl.variances[0] == pytest.approx(0.75, abs=1e-10)


def test_level_normalization_by_quadrature():
    g = GmmEnergy([0.3, 0.7], [[-1.5], [1.0]], [0.4, 0.9])
    fam = diffuse_gmm(g, linear_schedule(8, 0.05, 0.3))
    for t in range(fam.schedule.T + 1):
        total = quad_integral(
            lambda x, t=t: np.exp(-fam.level_energy(x[:, None], t)), -12.0, 12.0
        )
        assert total == pytest.approx(1.0, abs=1e-3)


def test_variance_widens_with_level(rng):
    # per-component level variance abar*s2 + (1 - abar) is nondecreasing in t
    # whenever s2 <= 1 (the total mixture variance can shrink when means are
    # spread out, so the per-component statement is the one that holds)
    for _ in range(5):
        k = rng.integers(1, 4)
        w = rng.random(k) + 0.1
        w /= w.sum()
        g = GmmEnergy(w, rng.normal(size=(k, 1)) * 2, rng.random(k) * 0.7 + 0.3)
        fam = diffuse_gmm(g, linear_schedule(12, 0.01, 0.2))
        per_comp = np.array([fam.level_gmm(t).variances for t in range(13)])
        assert np.all(np.diff(per_comp, axis=0) >= -1e-12)


def test_eps_zero_at_symmetric_point():
    fam = diffuse_gmm(gaussian_energy(0.0, 1.0), linear_schedule(6, 0.05, 0.2))
    for t in (1, 3, 6):
        assert eps_from_score(fam, np.array([0.0]), t)[0] == pytest.approx(0.0, abs=1e-14)


def test_eps_matches_finite_differences_of_level_energy():
    fam = diffuse_gmm(gaussian_energy(0.0, 1e-12), linear_schedule(4, 0.1, 0.4))
    x = np.array([0.8])
    for t in (1, 2, 4):
        num = fd_grad(lambda p, t=t: fam.level_energy(p, t), x)
        ab = fam.schedule.alpha_bar_at(t)
        np.testing.assert_allclose(
            eps_from_score(fam, x, t), np.sqrt(1 - ab) * num, rtol=1e-4
        )


def test_eps_score_round_trip():
    fam = diffuse_gmm(GmmEnergy([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0]),
                      linear_schedule(5, 0.05, 0.3))
    x = np.array([0.37])
    for t in (1, 3, 5):
        e = eps_from_score(fam, x, t)
        back = score_from_eps(e, fam.schedule, t)
        np.testing.assert_allclose(back, fam.level_grad(x, t), rtol=1e-12)


def test_eps_level_out_of_range():
    fam = diffuse_gmm(gaussian_energy(0.0, 1.0), linear_schedule(3, 0.1, 0.2))
    with pytest.raises(ConfigError):
        fam.eps(np.array([0.0]), 0)
    with pytest.raises(ConfigError):
        fam.eps(np.array([0.0]), 4)


# --- serialization


def test_gmm_json_round_trip():
    g = GmmEnergy([0.25, 0.75], [[-1.0, 2.0], [0.5, 0.0]], [0.5, 1.5])
    blob = json.dumps(gmm_to_json(g))
    g2 = gmm_from_json(blob)
    assert set(json.loads(blob)) == {"weights", "means", "variances"}
    np.testing.assert_array_equal(g2.weights, g.weights)
    np.testing.assert_array_equal(g2.means, g.means)
    np.testing.assert_array_equal(g2.variances, g.variances)


def test_schedule_json_round_trip():
    s = linear_schedule(7, 0.02, 0.4)
    blob = json.dumps(schedule_to_json(s))
    assert set(json.loads(blob)) == {"T", "beta_start", "beta_end"}
    s2 = schedule_from_json(blob)
    np.testing.assert_allclose(s2.beta, s.beta)
