import numpy as np
import pytest

import millopt as mo
from millopt.fem import FemModel, element_stiffness, simp_modulus


def top88_unit_stiffness(nu=0.3):
    """Canonical analytic plane-stress values for the unit-modulus quad."""
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12,
                  -1 / 8 + 3 * nu / 8, -1 / 4 + nu / 12, -1 / 8 - nu / 8,
                  nu / 6, 1 / 8 - 3 * nu / 8]) / (1 - nu ** 2)
    return k


def test_q4_stiffness_matches_canonical_values():
    k = top88_unit_stiffness()
    k0 = element_stiffness(2, 0.37, 0.3)  # scale free in 2D
    assert np.allclose(np.diag(k0), k[0])
    mine = np.sort(np.unique(np.round(k0, 12)))
    ref = np.sort(np.unique(np.round(k, 12)))
    assert np.array_equal(mine, ref)


@pytest.mark.parametrize("dim,h,zero_modes", [(2, 1.0, 3), (3, 0.25, 6)])
def test_element_stiffness_rigid_modes(dim, h, zero_modes):
    k0 = element_stiffness(dim, h, 0.3)
    assert np.allclose(k0, k0.T)
    w = np.linalg.eigvalsh(k0)
    assert int(np.sum(np.abs(w) < 1e-10)) == zero_modes
    assert w.min() > -1e-10  # positive semidefinite


def test_simp_modulus_endpoints_and_midpoint():
    mat = mo.MaterialConfig(e_max=1.0, e_min=1e-9, nu=0.3, simp_p=3.0)
    assert simp_modulus(0.0, mat) == pytest.approx(1e-9)
    assert simp_modulus(1.0, mat) == pytest.approx(1.0)
    assert simp_modulus(0.5, mat) == pytest.approx(0.125, rel=1e-6)
    mat5 = mo.MaterialConfig(simp_p=5.0)
    assert simp_modulus(0.5, mat5) == pytest.approx(0.5 ** 5, rel=1e-6)


def cantilever_case(dim=2):
    if dim == 2:
        support = mo.NodeSelector.at(x=0.0)
        load = (mo.NodeSelector.at(x=1.0, y=0.0), (0.0, -1.0))
    else:
        support = mo.NodeSelector.at(x=0.0)
        load = (mo.NodeSelector.at(x=1.0, y=0.0), (0.0, -1.0, 0.0))
    return mo.LoadCase(supports=(support,), loads=(load,))


def test_single_element_against_dense_oracle():
    g = mo.build_grid((1, 1), 1.0)
    mat = mo.MaterialConfig()
    state = mo.solve_state(g, mat, cantilever_case(), np.ones(1))
    dense = mo.dense_fea_compliance(g, mat, cantilever_case(), np.ones(1))
    assert state.compliance == pytest.approx(dense, rel=1e-12)
    assert state.compliance > 0
    assert state.residual <= 1e-8


@pytest.mark.parametrize("dims", [(6, 4), (3, 2, 2)])
def test_production_matches_dense_oracle(dims, rng):
    g = mo.build_grid(dims, 1.0 / dims[0])
    mat = mo.MaterialConfig(e_min=1e-4)
    lc = cantilever_case(len(dims))
    rho = rng.uniform(0.2, 1.0, g.n_elements)
    state = mo.solve_state(g, mat, lc, rho)
    dense = mo.dense_fea_compliance(g, mat, lc, rho)
    assert state.compliance == pytest.approx(dense, rel=1e-8)


def test_doubling_modulus_halves_compliance(rng):
    g = mo.build_grid((5, 3), 0.2)
    rho = rng.uniform(0.3, 1.0, g.n_elements)
    lc = cantilever_case()
    c1 = mo.solve_state(g, mo.MaterialConfig(e_max=1.0, e_min=1e-9), lc, rho).compliance
    c2 = mo.solve_state(g, mo.MaterialConfig(e_max=2.0, e_min=2e-9), lc, rho).compliance
    assert c1 / c2 == pytest.approx(2.0, rel=1e-12)


def test_compliance_sensitivity_sign_and_finite_differences(rng):
    g = mo.build_grid((6, 4), 0.25)
    mat = mo.MaterialConfig(e_min=1e-4)
    lc = mo.LoadCase(supports=(mo.NodeSelector.at(x=0.0),),
                     loads=((mo.NodeSelector.at(x=1.5, y=0.0), (0.0, -1.0)),))
    model = FemModel(g, mat, lc)
    rho = rng.uniform(0.3, 0.9, g.n_elements)
    state = model.solve(rho)
    sens = model.compliance_sensitivity(state, rho)
    assert np.all(sens <= 0.0)

    fd = mo.fd_gradient(lambda r: model.solve(r).compliance, rho, 1e-6,
                        range(g.n_elements))
    rel = np.abs(sens - fd) / np.maximum(np.abs(fd), 1e-12)
    assert rel.max() < 1e-5


def test_unloaded_far_element_has_negligible_sensitivity(rng):
    g = mo.build_grid((8, 4), 0.25)
    mat = mo.MaterialConfig(e_min=1e-9)
    lc = mo.LoadCase(supports=(mo.NodeSelector.at(x=0.0),),
                     loads=((mo.NodeSelector.at(x=2.0, y=0.0), (0.0, -1.0)),))
    model = FemModel(g, mat, lc)
    rho = np.full(g.n_elements, 1e-3)
    rho[:16] = 1.0  # load path along the bottom rows only
    state = model.solve(rho)
    sens = model.compliance_sensitivity(state, rho)
    # the top-left element rides almost rigidly on the void block, so its
    # strain energy is orders of magnitude below the load path's
    far = 8 * 3
    assert abs(sens[far]) < 1e-4 * np.abs(sens).max()


def test_compliance_decreases_when_density_increases(rng):
    g = mo.build_grid((5, 4), 0.2)
    mat = mo.MaterialConfig(e_min=1e-4)
    lc = cantilever_case()
    model = FemModel(g, mat, lc)
    rho = rng.uniform(0.3, 0.7, g.n_elements)
    base = model.solve(rho).compliance
    for e in rng.choice(g.n_elements, 5, replace=False):
        bumped = rho.copy()
        bumped[e] = min(1.0, bumped[e] + 0.2)
        assert model.solve(bumped).compliance <= base + 1e-12


def test_volume_constraint_values():
    g = mo.build_grid((6, 4), 0.25)
    gval, grad = mo.volume_and_sensitivity(np.full(24, 0.5), g, 0.5)
    assert gval == pytest.approx(0.0, abs=1e-14)
    gval, _ = mo.volume_and_sensitivity(np.ones(24), g, 0.5)
    assert gval == pytest.approx(1.0)
    assert np.allclose(grad, 1.0 / (0.5 * 24))


def test_volume_counts_design_elements_only():
    g = mo.build_grid((4, 2), 0.5, passive_regions=[((0.0, 0.0), (0.5, 0.5))])
    rho = g.expand_design(np.full(g.n_design, 0.25), passive_value=1.0)
    gval, grad = mo.volume_and_sensitivity(rho, g, 0.25)
    assert gval == pytest.approx(0.0, abs=1e-14)
    assert grad.shape == (g.n_design,)


def test_passive_elements_enter_at_full_stiffness(rng):
    g = mo.build_grid((4, 2), 0.5, passive_regions=[((0.0, 0.0), (0.5, 1.0))])
    mat = mo.MaterialConfig()
    lc = cantilever_case()
    model = FemModel(g, mat, lc)
    rho = g.expand_design(rng.uniform(0.2, 0.8, g.n_design), passive_value=1.0)
    tampered = rho.copy()
    tampered[g.passive_solid] = 0.0  # must be ignored
    assert model.solve(tampered).compliance == pytest.approx(
        model.solve(rho).compliance, rel=1e-12)


def test_loadcase_validation():
    with pytest.raises(ValueError):
        mo.LoadCase(supports=(), loads=((mo.NodeSelector.at(x=0.0), (0.0, 1.0)),))
    with pytest.raises(ValueError):
        mo.LoadCase(supports=(mo.NodeSelector.at(x=0.0),), loads=())
    with pytest.raises(ValueError):
        mo.LoadCase(supports=(mo.NodeSelector.at(x=0.0),),
                    loads=((mo.NodeSelector.at(x=1.0), (0.0, 0.0)),))


def test_selector_matching_no_nodes_rejected():
    g = mo.build_grid((4, 4), 0.25)
    with pytest.raises(ValueError, match="matches no nodes"):
        mo.NodeSelector.at(x=9.9).select(g)


def test_total_force_split_equally_along_edge():
    g = mo.build_grid((2, 2, 2), 0.5)
    lc = mo.LoadCase(supports=(mo.NodeSelector.at(x=0.0),),
                     loads=((mo.NodeSelector.at(x=1.0, y=0.0), (0.0, -1.0, 0.0)),))
    model = FemModel(g, mo.MaterialConfig(), lc)
    assert model.f.sum() == pytest.approx(-1.0)
    loaded = model.f[model.f != 0.0]
    assert np.allclose(loaded, loaded[0])
    assert loaded.size == 3  # one edge of a 2x2x2 grid has 3 nodes
