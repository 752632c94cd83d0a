"""Asymptotic solvability, mean-field limits and simulation for LQ games."""

from ._core import (
    BestResponseReport,
    ConvergenceRecord,
    IntegrityError,
    LimitSolution,
    ModelError,
    ModelParams,
    NotSolvableError,
    ReducedSolution,
    RepresentationReport,
    SimulationConfig,
    SimulationResult,
    SolvabilityReport,
    StrategyKind,
    TimeGrid,
    Trajectory,
    Verdict,
    assemble_P1,
    best_response_check,
    check_asymptotic_solvability,
    check_representation,
    convergence_study,
    finite_n_norm_stat,
    fit_loglog_slope,
    run_cli,
    simulate_population,
    solve_limit,
    solve_reduced,
    validate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
