"""millopt: topology optimization with machinability by milling.

Compliance minimization under a volume constraint where the design is
filtered through a chain of density regularization, per-tool-direction
advection-diffusion shadowing, power-mean aggregation, and Heaviside
projection, so every void region of the final design is reachable by a
milling tool from outside the domain.
"""

from .aggregate import AggregateConfig, heaviside_project, pmean_aggregate
from .density_filter import (CONVOLUTION, PDE_HELMHOLTZ, DensityFilter,
                             FilterSpec, apply_density_filter,
                             density_filter_adjoint, make_density_filter)
from .driver import (ContinuationSchedule, FieldStack, GridSpec,
                     IterationRecord, MachinabilityReport, OptimizeResult,
                     Pipeline, RunConfig, backward_chain, forward_chain,
                     machinability_check, optimize)
from .fem import (FemModel, LoadCase, MaterialConfig, NodeSelector,
                  StateSolution, simp_modulus, solve_state,
                  volume_and_sensitivity)
from .grid import (DIRICHLET_SOLID, INTERIOR, PASSIVE_INTERNAL, ROBIN,
                   FaceTable, StructuredGrid, build_grid,
                   classify_boundary_faces)
from .mma import (MmaConfig, MmaState, initial_spacing_for_beta, mma_update,
                  rescale_objective)
from .oracle import (dense_fea_compliance, fd_gradient, fd_step_scan,
                     oracle_cumsum_shadow)
from .shadow import (ShadowConfig, ShadowOperator, ToolDirection,
                     assemble_shadow_operator, peclet_rule_of_thumb,
                     robin_ghost_ratio, shadow_adjoint, shadow_forward)
from .solvers import OperatorSolver, SolverConvergenceError

__version__ = "0.1.0"
