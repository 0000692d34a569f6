"""Optimization loop: filter chain forward, state solve, adjoint chain
backward, MMA step, continuation, and the machinability post-check.

One design iteration with one constraint and ``n_tools`` directions performs
exactly ``(1 + 2) * (n_tools + 1)`` filter-family linear solves: one density
filter plus ``n_tools`` shadow solves forward, and one adjoint pass each for
the objective and the constraint. The instrumentation counters recorded per
iteration expose this accounting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .aggregate import AggregateConfig, heaviside_project, pmean_aggregate
from .density_filter import DensityFilter, FilterSpec
from .fem import FemModel, LoadCase, MaterialConfig, volume_and_sensitivity
from .grid import StructuredGrid, build_grid
from .mma import MmaConfig, MmaState, initial_spacing_for_beta, mma_update, rescale_objective
from .oracle import oracle_cumsum_shadow
from .shadow import ShadowConfig, assemble_shadow_operator, \
    shadow_adjoint, shadow_forward


@dataclass(frozen=True)
class GridSpec:
    dims: tuple
    h: float
    origin: tuple = ()
    passive_regions: tuple = ()

    def build(self) -> StructuredGrid:
        origin = self.origin if self.origin else (0.0,) * len(self.dims)
        return build_grid(self.dims, self.h, origin, self.passive_regions)


@dataclass(frozen=True)
class ContinuationSchedule:
    """Stepwise E_min reduction: divide by ``factor`` after each listed iteration."""

    e_min_initial: float | None = None
    steps: tuple = ()
    factor: float = 10.0

    def e_min_at(self, iteration: int, e_min_final: float) -> float:
        if self.e_min_initial is None:
            return e_min_final
        passed = sum(1 for t in self.steps if iteration > t)
        return max(e_min_final, self.e_min_initial / self.factor ** passed)


@dataclass
class RunConfig:
    """Everything one optimization run needs, in plain-python values."""

    grid: GridSpec
    filter: FilterSpec
    shadow: ShadowConfig
    project: AggregateConfig
    material: MaterialConfig
    loadcase: LoadCase
    v_star: float = 0.5
    rho_init: float = 0.005
    max_iters: int = 400
    change_tol: float = 1e-3
    continuation: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    mma: MmaConfig | None = None
    deterministic: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho_init < 1.0:
            raise ValueError(
                f"initial design value must lie strictly in (0, 1), got "
                f"{self.rho_init}; a pure-void or pure-solid start has no gradient")
        if not 0.0 < self.v_star <= 1.0:
            raise ValueError(f"volume fraction must lie in (0, 1], got {self.v_star}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.mma is None:
            # the canonical near-asymptote clamp: oscillating variables in
            # saturated shadow regions must stay mobile enough to binarize
            self.mma = MmaConfig(asyinit=initial_spacing_for_beta(self.project.beta),
                                 asy_min_gap=0.01)


@dataclass
class IterationRecord:
    iteration: int
    compliance: float
    scaled_objective: float
    volume_fraction: float
    constraint: float
    change: float
    fea_iterations: int
    filter_solves: int
    shadow_solves: int
    adjoint_solves: int
    wall_ms: float


@dataclass
class FieldStack:
    """All density fields of one forward pass, on the full element grid.

    Passive elements carry 1.0 in every stage so ``projected`` doubles as
    the physical density feeding the stiffness interpolation.
    """

    rho_design: np.ndarray
    rho_tilde: np.ndarray
    shadows: list
    aggregated: np.ndarray
    projected: np.ndarray
    pmean_factors: np.ndarray  # (n_s, n_design), empty row dim if bypassed


class Pipeline:
    """Grid-bound filter chain shared by every iteration of a run."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.grid = config.grid.build()
        self.filter = DensityFilter(config.filter, self.grid)
        config.shadow.validate_for_grid(self.grid)
        self.operators = [assemble_shadow_operator(self.grid, d, config.shadow)
                          for d in config.shadow.directions]

    @property
    def n_tools(self) -> int:
        return len(self.operators)

    def solve_counts(self) -> tuple:
        """(filter applies+adjoints, shadow forwards, shadow adjoints)."""
        filt = self.filter.n_apply + self.filter.n_adjoint
        fwd = sum(op.n_forward for op in self.operators)
        adj = sum(op.n_adjoint for op in self.operators)
        return filt, fwd, adj


def forward_chain(pipeline: Pipeline, rho_design: np.ndarray) -> FieldStack:
    """Run filter -> shadowing -> aggregation -> projection.

    With zero tool directions the shadow stage is bypassed and the
    projection applies to the regularized field directly (reference mode).
    """
    grid = pipeline.grid
    cfg = pipeline.config
    rho_design = np.asarray(rho_design, dtype=float)
    rho_tilde = pipeline.filter.apply_design(rho_design)
    design = grid.design_mask
    if pipeline.n_tools == 0:
        aggregated_d = rho_tilde[design]
        shadows = []
        factors = np.ones((0, aggregated_d.size))
    else:
        shadows = [shadow_forward(op, rho_tilde) for op in pipeline.operators]
        aggregated_d, factors = pmean_aggregate(
            [s[design] for s in shadows], cfg.project.p_mean)
    projected_d, _ = heaviside_project(aggregated_d, cfg.project.beta, cfg.project.eta)
    return FieldStack(
        rho_design=rho_design.copy(),
        rho_tilde=rho_tilde,
        shadows=shadows,
        aggregated=grid.expand_design(aggregated_d, passive_value=1.0),
        projected=grid.expand_design(projected_d, passive_value=1.0),
        pmean_factors=factors,
    )


def backward_chain(pipeline: Pipeline, stack: FieldStack,
                   df_dprojected: np.ndarray) -> np.ndarray:
    """Pull a sensitivity w.r.t. the projected field back to the design.

    Applies the projection derivative, distributes through the power-mean
    factors, solves one transposed shadow system per direction, sums the
    per-direction partials, and finishes with the density-filter adjoint.
    """
    grid = pipeline.grid
    cfg = pipeline.config
    design = grid.design_mask
    _, dheavi = heaviside_project(stack.aggregated[design], cfg.project.beta,
                                  cfg.project.eta)
    t = np.asarray(df_dprojected, dtype=float) * dheavi
    if pipeline.n_tools == 0:
        g_tilde = grid.expand_design(t, passive_value=0.0)
    else:
        g_tilde = np.zeros(grid.n_elements)
        for op, factor in zip(pipeline.operators, stack.pmean_factors):
            g_shadow = grid.expand_design(t * factor, passive_value=0.0)
            g_tilde += shadow_adjoint(op, g_shadow)
    return pipeline.filter.adjoint_design(g_tilde)


@dataclass
class OptimizeResult:
    stack: FieldStack
    records: list
    design: np.ndarray
    compliance: float
    converged: bool


def optimize(config: RunConfig, pipeline: Pipeline | None = None,
             iteration_callback=None) -> OptimizeResult:
    """Run the full optimization loop.

    The loop evaluates the chain and state at the current design, records
    the iteration, then takes an MMA step; it stops when the infinity-norm
    design change drops below ``change_tol`` or ``max_iters`` is reached.
    The returned stack and compliance belong to the last evaluated design.
    With ``max_iters = 0`` the initial design is evaluated once and
    returned unchanged.
    """
    if pipeline is None:
        pipeline = Pipeline(config)
    grid = pipeline.grid
    material = config.material
    model = FemModel(grid, material, config.loadcase)
    mma_state = MmaState()
    x = np.full(grid.n_design, config.rho_init)
    records: list = []
    design = grid.design_mask
    converged = False

    def evaluate(xk):
        stack = forward_chain(pipeline, xk)
        state = model.solve(stack.projected)
        return stack, state

    if config.max_iters == 0:
        stack, state = evaluate(x)
        g, _ = volume_and_sensitivity(stack.projected, grid, config.v_star)
        records.append(IterationRecord(
            iteration=0, compliance=state.compliance, scaled_objective=np.nan,
            volume_fraction=float(stack.projected[design].mean()), constraint=g,
            change=0.0, fea_iterations=state.iterations, filter_solves=1,
            shadow_solves=pipeline.n_tools, adjoint_solves=0, wall_ms=0.0))
        return OptimizeResult(stack=stack, records=records, design=x,
                              compliance=state.compliance, converged=False)

    stack = None
    state = None
    for it in range(1, config.max_iters + 1):
        e_min = config.continuation.e_min_at(it, config.material.e_min)
        if e_min != model.material.e_min:
            model.material = model.material.with_e_min(e_min)
        t0 = time.perf_counter()
        c0_filter, c0_fwd, c0_adj = pipeline.solve_counts()

        stack, state = evaluate(x)
        g, dg_dproj = volume_and_sensitivity(stack.projected, grid, config.v_star)
        dc_dproj = model.compliance_sensitivity(state, stack.projected)
        dc_dx = backward_chain(pipeline, stack, dc_dproj)
        dg_dx = backward_chain(pipeline, stack, dg_dproj)

        f0 = rescale_objective(mma_state, state.compliance)
        df0 = mma_state.obj_scale * dc_dx
        x_new = mma_update(mma_state, x, f0, df0, g, dg_dx, config.mma)
        change = float(np.max(np.abs(x_new - x)))

        c1_filter, c1_fwd, c1_adj = pipeline.solve_counts()
        wall_ms = (time.perf_counter() - t0) * 1e3
        record = IterationRecord(
            iteration=it, compliance=state.compliance, scaled_objective=f0,
            volume_fraction=float(stack.projected[design].mean()), constraint=g,
            change=change, fea_iterations=state.iterations,
            filter_solves=c1_filter - c0_filter, shadow_solves=c1_fwd - c0_fwd,
            adjoint_solves=c1_adj - c0_adj, wall_ms=wall_ms)
        records.append(record)
        if iteration_callback is not None:
            iteration_callback(it, x, stack, record)
        if change < config.change_tol:
            converged = True
            break
        if it == config.max_iters:
            break  # keep the last evaluated design; the untried step is dropped
        x = x_new

    return OptimizeResult(stack=stack, records=records, design=x,
                          compliance=state.compliance, converged=converged)


# ---------------------------------------------------------------------------
# Machinability post-check
# ---------------------------------------------------------------------------

@dataclass
class MachinabilityReport:
    n_void: int
    n_unreachable: int
    unreachable_fraction: float
    binary_fraction: float
    per_direction_reachable: list
    skipped_directions: list
    hole_artifact: bool

    def summary(self) -> str:
        lines = [
            f"void elements: {self.n_void}",
            f"unreachable by every direction: {self.n_unreachable} "
            f"({100 * self.unreachable_fraction:.3f}%)",
            f"binary fraction (outside 0.05..0.95): {100 * self.binary_fraction:.2f}%",
        ]
        for u, frac in self.per_direction_reachable:
            lines.append(f"direction {u}: reachable void fraction {100 * frac:.2f}%")
        for u in self.skipped_directions:
            lines.append(f"direction {u}: skipped (not axis-aligned)")
        if self.hole_artifact:
            lines.append("warning: enclosed void detected (hole artifact)")
        return "\n".join(lines)


def machinability_check(projected_full: np.ndarray, grid: StructuredGrid,
                        directions, threshold: float = 0.5) -> MachinabilityReport:
    """Check that thresholded void is reachable by at least one tool.

    The projected field is binarized at ``threshold`` and the cumulative
    sweep runs per axis-aligned direction on the binary field: a void
    element is reachable when no material lies between it and the entry
    face. Oblique directions cannot be line-swept and are reported as
    skipped.
    """
    projected_full = np.asarray(projected_full, dtype=float)
    design = grid.design_mask
    solid = (projected_full >= threshold) | grid.passive_solid
    void_design = ~solid & design
    n_void = int(np.count_nonzero(void_design))
    values = projected_full[design]
    binary = np.mean((values <= 0.05) | (values >= 0.95)) if values.size else 1.0

    reachable_any = np.zeros(grid.n_elements, dtype=bool)
    per_direction = []
    skipped = []
    for d in directions:
        u = d.vector if hasattr(d, "vector") else np.asarray(d, dtype=float)
        try:
            swept = oracle_cumsum_shadow(grid, u, solid.astype(float), s=1.0 / grid.h)
        except ValueError:
            skipped.append(tuple(np.round(u, 6)))
            continue
        reach = void_design & (swept < 0.5)
        reachable_any |= reach
        frac = float(np.count_nonzero(reach) / n_void) if n_void else 1.0
        per_direction.append((tuple(np.round(u, 6)), frac))

    if n_void and per_direction:
        n_unreachable = int(np.count_nonzero(void_design & ~reachable_any))
    else:
        n_unreachable = 0
    return MachinabilityReport(
        n_void=n_void,
        n_unreachable=n_unreachable,
        unreachable_fraction=(n_unreachable / n_void) if n_void else 0.0,
        binary_fraction=float(binary),
        per_direction_reachable=per_direction,
        skipped_directions=skipped,
        hole_artifact=n_unreachable > 0,
    )
