"""Steady-state natural-gas network flow solvers.

Data model and file formats live in :mod:`gfsolve.network`; solvers are the
closed-form tree propagation (:mod:`gfsolve.tree_solver`), the damped
Newton-Raphson baseline (:mod:`gfsolve.newton`), and the global
branch-and-bound solver over a big-M conic relaxation
(:mod:`gfsolve.misocp`). Cycle-space analysis gating the relaxation's
exactness guarantees is in :mod:`gfsolve.graphs`, independent reference
oracles in :mod:`gfsolve.oracles`, and the Monte-Carlo experiment harness in
:mod:`gfsolve.harness`.
"""

from .graphs import (AssumptionReport, CycleBasis, CycleIndicator,
                     SpanningTree, check_assumptions, cycle_decompose,
                     fundamental_cycles, spanning_tree)
from .harness import (McConfig, McReport, emit_report, perturb_injections,
                      run_monte_carlo)
from .misocp import (SolveResult, branch_and_bound, inexactness_gap,
                     recover_x, solve_gf)
from .network import (Compressor, Edge, FlowState, GasNetwork, NetworkError,
                      Pipe, ResidualReport, ValidationReport, build_network,
                      incidence_matrix, injections_from_dict, load_network,
                      load_scenario, parse_network, parse_scenario, residuals,
                      serialize_network, split_nonideal_compressor, validate)
from .newton import NrFailure, NrOptions, flow_from_pressures, nr_solve
from .oracles import (OracleSolution, UniquenessReport,
                      brute_force_single_cycle, lemma2_scenario_check,
                      multistart_uniqueness)
from .relaxation import (BigM, ConicOptions, ConicProgram, PrimalSolution,
                         build_relaxation, solve_conic,
                         verify_infeasibility_certificate)
from .tree_solver import (InfeasibleCompressorDirectionError,
                          InfeasiblePressureError, NotATreeError,
                          TreeSolveError, pipe_pressure_drop, solve_tree)

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport", "BigM", "Compressor", "ConicOptions", "ConicProgram",
    "CycleBasis", "CycleIndicator", "Edge", "FlowState", "GasNetwork",
    "InfeasibleCompressorDirectionError", "InfeasiblePressureError",
    "McConfig", "McReport", "NetworkError", "NotATreeError", "NrFailure",
    "NrOptions", "OracleSolution", "Pipe", "PrimalSolution", "ResidualReport",
    "SolveResult", "SpanningTree", "TreeSolveError", "UniquenessReport",
    "ValidationReport", "branch_and_bound", "brute_force_single_cycle",
    "build_network", "build_relaxation", "check_assumptions",
    "cycle_decompose", "emit_report", "flow_from_pressures",
    "fundamental_cycles", "incidence_matrix", "inexactness_gap",
    "injections_from_dict", "lemma2_scenario_check", "load_network",
    "load_scenario", "multistart_uniqueness", "nr_solve", "parse_network",
    "parse_scenario", "perturb_injections", "pipe_pressure_drop", "recover_x",
    "residuals", "run_monte_carlo", "serialize_network", "solve_conic",
    "solve_gf", "solve_tree", "spanning_tree", "split_nonideal_compressor",
    "validate", "verify_infeasibility_certificate",
]
