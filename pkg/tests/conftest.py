import numpy as np
import pytest

import millopt as mo
from millopt import _kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # JIT compile outside any timed assertion
    _kernels.warmup()


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def cantilever_config(dims=(12, 6), angles=(0.0,), *, p_mean=-4.0, beta=8.0,
                      simp_p=3.0, e_min=1e-9, rho_init=0.5, v_star=0.5,
                      max_iters=10, r_min_elems=1.5, peclet=1e4,
                      source_factor=1.0, continuation=None):
    """Small 2:1 cantilever used across the driver and acceptance tests."""
    from millopt.driver import ContinuationSchedule, GridSpec, RunConfig

    h = 2.0 / dims[0]
    return RunConfig(
        grid=GridSpec(dims=dims, h=h),
        filter=mo.FilterSpec("convolution", r_min=r_min_elems * h),
        shadow=mo.ShadowConfig(
            peclet=peclet, source_factor=source_factor,
            directions=tuple(mo.ToolDirection.from_angle_deg(a) for a in angles)),
        project=mo.AggregateConfig(p_mean=p_mean, beta=beta, eta=0.5),
        material=mo.MaterialConfig(e_max=1.0, e_min=e_min, nu=0.3, simp_p=simp_p),
        loadcase=mo.LoadCase(
            supports=(mo.NodeSelector.at(x=0.0),),
            loads=((mo.NodeSelector.at(x=2.0, y=0.0), (0.0, -1.0)),)),
        v_star=v_star, rho_init=rho_init, max_iters=max_iters,
        continuation=continuation or ContinuationSchedule())
