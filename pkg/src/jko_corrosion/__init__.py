"""Minimizing-movement scheme for a 1D free-boundary corrosion model, with checkers."""
from .core import (ConfigError, GridDensity, ModelParams, PenaltyParams, State, Trajectory,
                   boltzmann_f, derive_thresholds, energy, lyapunov, mass_excess)
from .diagnostics import (DiagnosticsLedger, WeakResidualReport, bounds_check,
                          dissipation_ledger_update, hstar_norm, vi_check, weak_residuals)
from .io_cli import RunConfig, parse_config, refinement_study, run_simulation
from .jko_stepper import (SolverOptions, StepReport, interface_update, minimize_step,
                          objective_eval, penalty_eval, step_residuals)
from .oracle_fd import FDOptions, OracleState, fd_step, run_oracle
from .transport import CaseSign, TransportResult, lp_oracle_w2, wasserstein_sq

__all__ = [
    "CaseSign", "ConfigError", "DiagnosticsLedger", "FDOptions", "GridDensity", "ModelParams",
    "OracleState", "PenaltyParams", "RunConfig", "SolverOptions", "State", "StepReport",
    "Trajectory", "TransportResult", "WeakResidualReport", "boltzmann_f", "bounds_check",
    "derive_thresholds", "dissipation_ledger_update", "energy", "fd_step", "hstar_norm",
    "interface_update", "lp_oracle_w2", "lyapunov", "mass_excess", "minimize_step",
    "objective_eval", "parse_config", "penalty_eval", "refinement_study", "run_oracle",
    "run_simulation", "step_residuals", "vi_check", "wasserstein_sq", "weak_residuals",
]
