import numpy as np
import pytest

import millopt as mo
from millopt.aggregate import AggregateConfig, heaviside_project, pmean_aggregate


def test_equal_fields_are_a_fixed_point(rng):
    v = rng.uniform(0.5, 3.0, 40)
    for p in (-1.0, -4.0, -16.0):
        agg, _ = pmean_aggregate([v, v, v], p)
        assert np.allclose(agg, v, rtol=1e-12)


def test_two_field_reference_value():
    # ((1 + 3^-4)/2)^(-1/4), evaluated directly
    agg, _ = pmean_aggregate([np.array([1.0]), np.array([3.0])], -4.0)
    assert agg[0] == pytest.approx(((1 + 3.0 ** -4) / 2) ** (-0.25), rel=1e-14)
    assert agg[0] == pytest.approx(1.1856, abs=1e-4)


def test_single_field_p_one_is_identity(rng):
    v = rng.uniform(0.0, 5.0, 25)
    agg, factors = pmean_aggregate([v], 1.0)
    assert np.array_equal(agg, v)
    assert np.all(factors == 1.0)


def test_pmean_bounds_for_negative_p(rng):
    fields = rng.uniform(0.1, 10.0, (4, 60))
    agg, _ = pmean_aggregate(fields, -4.0)
    lo = fields.min(axis=0)
    assert np.all(agg >= lo - 1e-12)
    assert np.all(agg <= 4 ** (1 / 4.0) * lo + 1e-12)


def test_pmean_approaches_min(rng):
    # the normalized mean can never sit closer to the minimum than the
    # n^(-1/p) prefactor allows, so the p = -64 error is checked against
    # that exact bound (about 1.7% of the minimum for three fields)
    fields = rng.uniform(0.1, 10.0, (3, 80))
    lo = fields.min(axis=0)
    prev_err = np.inf
    for p in (-8.0, -16.0, -32.0, -64.0):
        agg, _ = pmean_aggregate(fields, p)
        err = np.max(np.abs(agg - lo))
        assert err < prev_err + 1e-15
        prev_err = err
        bound = (3.0 ** (-1.0 / p) - 1.0) * lo.max() + 1e-12
        assert err <= bound


def test_pmean_factors_match_finite_differences(rng):
    fields = rng.uniform(0.2, 4.0, (3, 12))
    _, factors = pmean_aggregate(fields, -4.0)
    eps = 1e-7
    for s in range(3):
        for e in range(12):
            up = fields.copy()
            up[s, e] += eps
            dn = fields.copy()
            dn[s, e] -= eps
            fd = (pmean_aggregate(up, -4.0)[0][e] - pmean_aggregate(dn, -4.0)[0][e]) / (2 * eps)
            # tiny factors sit below the FD resolution; compare those absolutely
            assert factors[s, e] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_clamped_entries_have_zero_factor():
    fields = np.array([[0.0, 0.5], [2.0, 1.0]])
    agg, factors = pmean_aggregate(fields, -4.0)
    assert np.isfinite(agg).all()
    assert factors[0, 0] == 0.0
    assert factors[1, 1] > 0.0


def test_pmean_rejects_bad_exponents(rng):
    v = rng.uniform(0.1, 1.0, 5)
    with pytest.raises(ValueError):
        pmean_aggregate([v, v], 1.0)  # p = 1 needs a single field
    with pytest.raises(ValueError):
        pmean_aggregate([v], 2.0)
    with pytest.raises(ValueError):
        pmean_aggregate([v, np.full(5, np.nan)], -4.0)


def test_heaviside_endpoints_exact():
    for beta, eta in ((8.0, 0.5), (10.0, 0.5), (8.0, 0.3)):
        proj, _ = heaviside_project(np.array([0.0, 1.0]), beta, eta)
        assert proj[0] == pytest.approx(0.0, abs=1e-15)
        assert proj[1] == pytest.approx(1.0, abs=1e-15)


def test_heaviside_midpoint_symmetry():
    for beta in (2.0, 8.0, 25.0):
        proj, _ = heaviside_project(np.array([0.5]), beta, 0.5)
        assert proj[0] == pytest.approx(0.5, rel=1e-14)


def test_heaviside_reference_value():
    # 0.0176627062132911 evaluated in 30-digit arithmetic
    proj, _ = heaviside_project(np.array([0.25]), 8.0, 0.5)
    assert proj[0] == pytest.approx(0.0176627062132911, abs=1e-14)
    assert proj[0] == pytest.approx(0.017662, abs=1e-6)


def test_heaviside_monotone_and_bounded(rng):
    x = np.sort(rng.uniform(-1.0, 60.0, 300))
    proj, deriv = heaviside_project(x, 8.0, 0.5)
    assert np.all(np.diff(proj) >= 0.0)
    assert np.all(deriv >= 0.0)
    # saturation overshoot above 1 stays at tanh-residual scale
    assert proj.max() <= 1.0 + 4e-4


def test_heaviside_derivative_matches_finite_differences(rng):
    x = rng.uniform(0.05, 0.95, 50)  # away from derivative zeros
    _, deriv = heaviside_project(x, 8.0, 0.5)
    eps = 1e-7
    fd = (heaviside_project(x + eps, 8.0, 0.5)[0] -
          heaviside_project(x - eps, 8.0, 0.5)[0]) / (2 * eps)
    assert np.max(np.abs(deriv - fd) / np.abs(fd)) < 1e-6


def test_composition_monotonicity(rng):
    fields = rng.uniform(0.1, 2.0, (3, 30))
    agg, _ = pmean_aggregate(fields, -4.0)
    base, _ = heaviside_project(agg, 8.0, 0.5)
    bumped = fields.copy()
    bumped[1, 17] += 0.05
    agg2, _ = pmean_aggregate(bumped, -4.0)
    after, _ = heaviside_project(agg2, 8.0, 0.5)
    assert after[17] >= base[17]
    assert np.allclose(np.delete(after, 17), np.delete(base, 17))


def test_config_validation():
    with pytest.raises(ValueError):
        AggregateConfig(p_mean=0.0)
    with pytest.raises(ValueError):
        AggregateConfig(p_mean=2.0)
    with pytest.raises(ValueError):
        AggregateConfig(p_mean=-4.0, beta=-1.0)
    with pytest.raises(ValueError):
        AggregateConfig(p_mean=-4.0, eta=1.0)
    AggregateConfig(p_mean=1.0)  # valid: single-direction pass-through
