"""Jump-measure quantities against adaptive-integration oracles.

The production integrals are midpoint sums; every [oracle] comparison here
recomputes the target with scipy's adaptive quadrature (or a closed form),
independent of the code path under test.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from hjbvi import (ConfigurationError, IntegrationError, LevyMeasure,
                   build_quadrature, drift_correction, small_jump_variance,
                   tempered_stable, truncated_mass, zero_measure)

EULER_GAMMA = 0.5772156649015329


def e1_series(z: float, terms: int = 60) -> float:
    """Exponential integral E1 via its alternating series (oracle)."""
    acc = -EULER_GAMMA - np.log(z)
    term = 1.0
    for k in range(1, terms + 1):
        term *= -z / k
        acc -= term / k
    return acc


def quad_mass(mu: float, eps: float) -> float:
    """Adaptive oracle for the symmetric tempered-stable truncated mass."""
    val, _ = quad(lambda s: np.exp(-mu * s) / s, eps, np.inf)
    return 2.0 * val


def test_truncated_mass_tempered_stable():
    nu = tempered_stable(6.0, epsilon=0.01)
    oracle = quad_mass(6.0, 0.01)
    assert oracle == pytest.approx(4.59061383629, rel=1e-9)
    assert truncated_mass(nu) == pytest.approx(oracle, rel=0.01)


def test_truncated_mass_large_epsilon():
    nu = tempered_stable(6.0, epsilon=1.0)
    oracle = quad_mass(6.0, 1.0)
    assert oracle == pytest.approx(7.20164904325e-4, rel=1e-9)
    assert truncated_mass(nu) == pytest.approx(oracle, rel=0.01)


def test_truncated_mass_zero_measure():
    assert truncated_mass(zero_measure()) == 0.0


def test_tail_mass_matches_e1_series():
    # e_max = 1 keeps the series well-conditioned: tail per side = E1(mu).
    nu = tempered_stable(6.0, epsilon=0.5, e_max=1.0, bins_per_unit=2)
    assert nu.tail_mass_plus == pytest.approx(e1_series(6.0), rel=1e-8)
    assert nu.tail_mass_minus == pytest.approx(e1_series(6.0), rel=1e-8)


def test_small_jump_variance_closed_form():
    mu, eps = 6.0, 0.01
    nu = tempered_stable(mu, epsilon=eps)
    closed = 2.0 * (1.0 - np.exp(-mu * eps) * (1.0 + mu * eps)) / mu**2
    assert closed == pytest.approx(9.60885778165e-5, rel=1e-9)
    amp = lambda e: np.minimum(1.0, np.abs(e))
    assert small_jump_variance(nu, amp) == pytest.approx(closed, rel=2e-3)
    fine = tempered_stable(mu, epsilon=eps, bins_per_unit=6400)
    assert small_jump_variance(fine, amp) == pytest.approx(closed, rel=1e-5)


def test_small_jump_variance_trivial_cases():
    tiny = tempered_stable(6.0, epsilon=1e-9)
    amp = lambda e: np.minimum(1.0, np.abs(e))
    assert small_jump_variance(tiny, amp) < 1e-12
    nu = tempered_stable(6.0, epsilon=0.01)
    assert small_jump_variance(nu, lambda e: np.zeros_like(e)) == 0.0


def test_drift_correction_benchmark_value():
    mu, eps = 6.0, 0.01
    nu = tempered_stable(mu, epsilon=eps)
    # oracle: -2 [ int_eps^1 exp(-mu s) ds + int_1^inf exp(-mu s)/s ds ]
    inner, _ = quad(lambda s: np.exp(-mu * s), eps, 1.0)
    outer, _ = quad(lambda s: np.exp(-mu * s) / s, 1.0, np.inf)
    oracle = -2.0 * (inner + outer)
    assert oracle == pytest.approx(-0.313815425374, rel=1e-8)
    amp = lambda e: np.minimum(1.0, np.abs(e))
    assert drift_correction(nu, amp) == pytest.approx(oracle, rel=1e-4)


def test_drift_correction_trivial_cases():
    nu = tempered_stable(6.0, epsilon=0.01)
    assert drift_correction(nu, lambda e: np.zeros_like(e)) == 0.0
    # odd amplitude against the symmetric density integrates to zero
    signed = lambda e: np.where(np.abs(e) <= 1.0, e, 0.0)
    assert abs(drift_correction(nu, signed)) < 1e-14


def test_build_quadrature_hand_example():
    nu = tempered_stable(6.0, epsilon=0.5, e_max=1.0, bins_per_unit=2)
    q = build_quadrature(nu)
    assert np.allclose(np.sort(q.nodes), [-0.75, 0.75])
    w = np.exp(-4.5) / 0.75 * 0.5
    assert np.allclose(q.weights, [w, w])
    assert q.tail_masses == pytest.approx([e1_series(6.0)] * 2, rel=1e-8)
    assert set(q.tail_nodes) == {-1.0, 1.0}


def test_build_quadrature_zero_density():
    q = build_quadrature(zero_measure())
    assert np.all(q.weights == 0.0)
    assert np.all(q.tail_masses == 0.0)


def test_quadrature_mass_within_one_percent_of_adaptive():
    for bpu in (200, 400):
        nu = tempered_stable(6.0, epsilon=0.01, bins_per_unit=bpu)
        q = build_quadrature(nu)
        oracle = quad_mass(6.0, 0.01)
        assert q.total_mass() == pytest.approx(oracle, rel=0.01)


def test_weights_nonnegative_random_densities():
    rng = np.random.default_rng(7)
    densities = [
        lambda e: np.exp(-np.abs(e)),
        lambda e: np.exp(-e * e),
        lambda e: np.exp(-4.0 * np.abs(e)) / np.sqrt(np.abs(e)),
    ]
    for density in densities:
        eps = float(rng.uniform(0.01, 0.5))
        nu = LevyMeasure(density=density, epsilon=eps, e_max=3.0,
                         bins_per_unit=50)
        q = build_quadrature(nu)
        assert np.all(q.weights >= 0.0)
        assert np.all(q.tail_masses >= 0.0)


def test_midpoint_refinement_is_second_order():
    # smooth regime (eps away from the singularity) so the O(de^2) law shows
    mu, eps = 2.0, 0.5
    amp = lambda e: np.minimum(1.0, np.abs(e))
    mass_oracle = quad_mass(mu, eps)
    sjv_oracle = 2.0 * quad(lambda s: s * np.exp(-mu * s), 0.0, eps)[0]
    drift_oracle = -2.0 * (quad(lambda s: np.exp(-mu * s), eps, 1.0)[0]
                           + quad(lambda s: np.exp(-mu * s) / s, 1.0, np.inf)[0])

    def errors(bpu):
        nu = tempered_stable(mu, epsilon=eps, bins_per_unit=bpu)
        return (abs(truncated_mass(nu) - mass_oracle),
                abs(small_jump_variance(nu, amp) - sjv_oracle),
                abs(drift_correction(nu, amp) - drift_oracle))

    coarse, mid, fine = errors(50), errors(100), errors(200)
    for name, (e0, e1, e2) in zip(("mass", "variance", "drift"),
                                  zip(coarse, mid, fine)):
        assert 2.5 < e0 / e1 < 6.0, name
        assert 2.5 < e1 / e2 < 6.0, name


def test_monotonicity_in_epsilon():
    amp = lambda e: np.minimum(1.0, np.abs(e))
    masses, variances = [], []
    for eps in (0.02, 0.1, 0.4):
        nu = tempered_stable(5.0, epsilon=eps, bins_per_unit=800)
        masses.append(truncated_mass(nu))
        variances.append(small_jump_variance(nu, amp))
    assert masses[0] > masses[1] > masses[2]
    assert variances[0] < variances[1] < variances[2]


def test_invalid_configurations():
    with pytest.raises(ConfigurationError):
        tempered_stable(6.0, epsilon=2.0, e_max=1.5)  # e_max <= eps
    with pytest.raises(ConfigurationError):
        tempered_stable(6.0, epsilon=0.1, e_max=0.5)  # e_max < 1
    with pytest.raises(ConfigurationError):
        tempered_stable(6.0, epsilon=-0.1)
    with pytest.raises(ConfigurationError):
        tempered_stable(6.0, epsilon=0.1, bins_per_unit=0)
    with pytest.raises(ConfigurationError):
        build_quadrature(LevyMeasure(density=lambda e: -np.ones_like(e),
                                     epsilon=0.1, tail_mass_plus=0.0,
                                     tail_mass_minus=0.0))


def test_non_integrable_density_raises():
    # non-finite density values inside the integration range
    nu = LevyMeasure(density=lambda e: np.where(np.abs(e) < 1.0, np.inf, 0.0),
                     epsilon=0.1, e_max=3.0, bins_per_unit=5,
                     tail_mass_plus=0.0, tail_mass_minus=0.0)
    with pytest.raises(IntegrationError):
        build_quadrature(nu)
    with pytest.raises(IntegrationError):
        small_jump_variance(nu, lambda e: np.minimum(1.0, np.abs(e)))
