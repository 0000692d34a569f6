import numpy as np
import pytest

import millopt as mo


def hat_weight_sum(r_min, h, reach):
    """Direct summation oracle for the full (untruncated) stencil."""
    total = 0.0
    for dj in range(-reach, reach + 1):
        for di in range(-reach, reach + 1):
            total += max(0.0, r_min - h * np.hypot(di, dj))
    return total


@pytest.mark.parametrize("kind", ["convolution", "pde"])
def test_uniform_field_is_fixed_point(kind):
    g = mo.build_grid((9, 7), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec(kind, r_min=0.25), g)
    out = filt.apply_full(np.full(g.n_elements, 0.5))
    assert np.allclose(out, 0.5, atol=1e-12)


def test_spike_center_value_matches_hat_oracle():
    h, r = 0.01, 0.03
    g = mo.build_grid((11, 11), h)
    filt = mo.DensityFilter(mo.FilterSpec("convolution", r_min=r), g)
    spike = np.zeros(g.n_elements)
    center = 11 * 5 + 5
    spike[center] = 1.0
    out = filt.apply_full(spike)
    expected = r / hat_weight_sum(r, h, 3)
    assert out[center] == pytest.approx(expected, rel=1e-12)


def test_pde_filter_matches_dense_tridiagonal_solve():
    # 3-element 1D chain; oracle is a hand-built dense system
    g = mo.build_grid((3, 1), 1.0)
    r_min = 0.9
    filt = mo.DensityFilter(mo.FilterSpec("pde", r_min=r_min), g)
    a = (r_min / (2 * np.sqrt(3.0))) ** 2  # (r/h)^2 with h = 1
    A = np.array([[1 + a, -a, 0], [-a, 1 + 2 * a, -a], [0, -a, 1 + a]])
    rho = np.array([1.0, 0.0, 0.5])
    expected = np.linalg.solve(A, rho)
    assert np.allclose(filt.apply_full(rho), expected, atol=1e-12)


def test_convolution_adjoint_identity(rng):
    g = mo.build_grid((7, 5), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec("convolution", r_min=0.25), g)
    for _ in range(10):
        x = rng.random(g.n_elements)
        y = rng.random(g.n_elements)
        lhs = filt.apply_full(x) @ y
        rhs = x @ filt.adjoint_full(y)
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(x) * np.linalg.norm(y) * 10


def test_pde_adjoint_equals_forward(rng):
    g = mo.build_grid((6, 4, 3), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec("pde", r_min=0.25), g)
    x = rng.random(g.n_elements)
    assert np.allclose(filt.adjoint_full(x), filt.apply_full(x), rtol=1e-12)


@pytest.mark.parametrize("kind", ["convolution", "pde"])
def test_zero_sensitivity_maps_to_zero(kind):
    g = mo.build_grid((5, 5), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec(kind, r_min=0.2), g)
    assert np.all(filt.adjoint_full(np.zeros(25)) == 0.0)


def test_mass_preservation_on_ones():
    g = mo.build_grid((12, 9), 0.05)
    filt = mo.DensityFilter(mo.FilterSpec("convolution", r_min=0.16), g)
    out = filt.apply_full(np.ones(g.n_elements))
    assert np.allclose(out, 1.0, atol=1e-13)


@pytest.mark.parametrize("kind", ["convolution", "pde"])
def test_positivity_preservation(kind, rng):
    g = mo.build_grid((10, 6), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec(kind, r_min=0.22), g)
    for _ in range(5):
        rho = np.abs(rng.standard_normal(g.n_elements))
        assert filt.apply_full(rho).min() >= -1e-12


@pytest.mark.parametrize("kind", ["convolution", "pde"])
def test_linearity(kind, rng):
    g = mo.build_grid((8, 5), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec(kind, r_min=0.25), g)
    x, y = rng.random(g.n_elements), rng.random(g.n_elements)
    combined = filt.apply_full(2.5 * x - 0.75 * y)
    separate = 2.5 * filt.apply_full(x) - 0.75 * filt.apply_full(y)
    assert np.allclose(combined, separate, atol=1e-12)


def test_non_finite_input_rejected():
    g = mo.build_grid((4, 4), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec("convolution", r_min=0.2), g)
    bad = np.zeros(16)
    bad[3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        filt.apply_full(bad)


def test_subelement_radius_rejected():
    g = mo.build_grid((4, 4), 0.1)
    with pytest.raises(ValueError, match="below one element"):
        mo.DensityFilter(mo.FilterSpec("convolution", r_min=0.05), g)


def test_passive_elements_filter_as_solid():
    g = mo.build_grid((6, 1), 0.1, passive_regions=[((0.5, 0.0), (0.6, 0.1))])
    filt = mo.DensityFilter(mo.FilterSpec("convolution", r_min=0.15), g)
    rho_tilde = filt.apply_design(np.zeros(g.n_design))
    # the element next to the passive one picks up its unit density through
    # the hat weights: 0.05 / (0.05 + 0.15 + 0.05)
    assert rho_tilde[4] == pytest.approx(0.2, rel=1e-12)
    assert rho_tilde[0] == 0.0


def test_adjoint_design_discards_passive_entries(rng):
    g = mo.build_grid((6, 3), 0.1, passive_regions=[((0.0, 0.0), (0.2, 0.1))])
    filt = mo.DensityFilter(mo.FilterSpec("convolution", r_min=0.15), g)
    grad = filt.adjoint_design(rng.random(g.n_elements))
    assert grad.shape == (g.n_design,)


def test_apply_counts_increment():
    g = mo.build_grid((4, 4), 0.1)
    filt = mo.DensityFilter(mo.FilterSpec("convolution", r_min=0.2), g)
    filt.apply_full(np.zeros(16))
    filt.adjoint_full(np.zeros(16))
    filt.apply_design(np.zeros(16))
    assert filt.n_apply == 2 and filt.n_adjoint == 1
