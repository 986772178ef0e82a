"""obshom: a numerical laboratory for boundary-obstacle homogenization.

Builds microscale obstacle sets on a boundary face, computes patch
capacities and capacitary potentials, verifies the corrector estimates
that drive the homogenization limit by high-order quadrature, solves the
microscale variational inequality and the homogenized boundary-penalty
problem on uniform grids, and sweeps the microscale to exhibit the
convergence of the obstacle solutions to the penalty minimizer.
"""

from .capacity import (CapacityResult, CapacitySolverParams, PatchSpec,
                       PotentialField, ball_potential, capacity_of_ball,
                       check_potential_decay, compute_capacity, disk_capacity,
                       disk_potential, equivalent_radius, fundamental_solution)
from .corrector import (BoundaryTerms, BridgeProfile, CorrectorField,
                        FluxAuxiliary, StitchedCorrector, boundary_terms,
                        corrector_norms, eval_bridge, eval_corrector,
                        eval_flux_aux, eval_stitched, shell_term_vs_density,
                        stitch_gap, stitched_diagnostics, wall_term_rate)
from .geometry import (BoundaryGraph, DomainSpec, SiteLayout,
                       boundary_graph_eval, make_domain, place_sites,
                       surface_quadrature)
from .harness import (ExperimentConfig, emit_outputs, estimate_limit_density,
                      run_corrector_suite, run_sweep, slab_config)
from .obstacle_field import (DensityField, ObstacleSet, analytic_limit_density,
                             build_obstacle, density_field, hminus_proxy,
                             pair_density)
from .pde import (Grid, GridFunction, PenaltyProblem, SolveReport, VIProblem,
                  build_grid, dirichlet_energy, energy_report, inject,
                  l2_distance, make_penalty_problem, make_vi_problem,
                  penalty_energy, solve_limit, solve_vi, solve_vi_oracle)
from .quadrature import QuadConfig

__version__ = "0.1.0"
