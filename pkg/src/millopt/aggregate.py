"""Power-mean agglomeration of shadow fields and smoothed Heaviside projection.

Both maps are pure elementwise operations with closed-form derivatives, so
the chain rule through them costs one multiply per element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PMEAN_CLAMP = 1e-9  # floor applied before negative powers; inflow cells can be exactly 0


@dataclass(frozen=True)
class AggregateConfig:
    """Exponent of the power mean and Heaviside projection parameters."""

    p_mean: float = -4.0
    beta: float = 8.0
    eta: float = 0.5

    def __post_init__(self):
        if self.p_mean == 0:
            raise ValueError("p-mean exponent must be nonzero")
        if self.p_mean > 0 and self.p_mean != 1:
            raise ValueError("positive p-mean exponents other than 1 are not supported")
        if self.beta <= 0:
            raise ValueError("projection sharpness must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("projection threshold must lie in (0, 1)")


def pmean_aggregate(fields, p: float):
    """Agglomerate per-direction shadow fields with a power mean.

    For p < 0 this is a smooth approximation of the elementwise minimum:
    ``((1/n) sum_s v_s^p)^(1/p)``. Inputs are clamped below at
    ``PMEAN_CLAMP`` first so exact zeros at inflow cells stay finite.

    Returns
    -------
    (aggregated, factors)
        ``aggregated`` has the shape of one field; ``factors`` is the
        (n_s, n) stack of partial derivatives d(aggregated)/d(field_s),
        evaluated at the clamped inputs.
    """
    stack = np.atleast_2d(np.asarray(fields, dtype=float))
    n_s = stack.shape[0]
    if n_s < 1:
        raise ValueError("at least one shadow field is required")
    if not np.all(np.isfinite(stack)):
        raise ValueError("p-mean input contains non-finite entries")
    if p == 1:
        if n_s != 1:
            raise ValueError("p = 1 is only valid with a single tool direction")
        return stack[0].copy(), np.ones_like(stack)
    if p >= 0:
        raise ValueError(f"p-mean exponent must be negative (or 1), got {p}")

    v = np.maximum(stack, PMEAN_CLAMP)
    # factor out the minimum so v^p never overflows for p << 0
    m = v.min(axis=0)
    t = v / m
    mean_tp = np.mean(t ** p, axis=0)
    aggregated = m * mean_tp ** (1.0 / p)
    factors = (mean_tp ** (1.0 / p - 1.0)) * (t ** (p - 1.0)) / n_s
    factors[stack < PMEAN_CLAMP] = 0.0  # clamped entries are locally constant
    return aggregated, factors


def heaviside_project(x, beta: float, eta: float):
    """Smoothed Heaviside threshold bounding the field to [0, ~1].

    Maps 0 -> 0 and 1 -> 1 exactly; inputs far above 1 (deep inside a
    shadow) saturate just above 1 by a margin of order tanh residuals,
    which SIMP tolerates. Returns (projected, elementwise derivative).
    """
    x = np.asarray(x, dtype=float)
    tbe = np.tanh(beta * eta)
    denom = tbe + np.tanh(beta * (1.0 - eta))
    core = np.tanh(beta * (x - eta))
    projected = (tbe + core) / denom
    derivative = beta * (1.0 - core ** 2) / denom
    return projected, derivative
