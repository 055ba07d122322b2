"""toxflow: optimal unwinding of toxic order flow under partial observation.

A dealer internalizes a client flow Z whose drift theta (the toxicity) is
unobservable and mean reverting.  The package provides

* the model layer: parameter containers, scenario presets, config files,
* a Kalman-Bucy filter for theta with its matrix Riccati equation,
* the closed-form feedback control built from an 8-state linear system,
* a Monte Carlo engine with common random numbers across agent types,
* flow-data calibration helpers, and a ``toxflow`` command line.
"""

from .model import (
    AssumptionError,
    CoefFn,
    InitialState,
    ModelSpec,
    NumericalError,
    SCENARIO_NAMES,
    SignalSpec,
    TimeGrid,
    ToxflowError,
    ValidationError,
    as_coef,
    default_grid,
    eval_coef,
    load_config,
    loads_config,
    dumps_config,
    save_config,
    scenario_preset,
)
from .filtering import (
    FilterState,
    RiccatiSolution,
    filter_step,
    initial_filter_state,
    innovation_loadings,
    solve_riccati,
    write_riccati_csv,
)
from .control import (
    AssumptionReport,
    CoefficientTable,
    LedgerRow,
    build_L,
    build_coefficient_table,
    check_assumptions,
    compute_GHIJ,
    feedback_rate,
    signal_gain_gU,
    solve_S,
    solve_phi_forward,
    write_assumptions_json,
    write_gains_csv,
)
from .sim import (
    Agent,
    McSummary,
    TrajectoryRecord,
    gateaux_residual,
    perturbed_cost_gap,
    pnl_decomposition,
    run_montecarlo,
    simulate_path,
    write_flow_csv,
    write_histogram_csv,
    write_mc_summary_json,
    write_paths_csv,
    write_trajectory_csv,
)
from .calib import (
    FlowSeries,
    b_proxy_pairs,
    estimate_b_proxy,
    estimate_sigma,
    estimate_theta_daily,
    load_flow_csv,
    write_calibration_json,
    write_theta_cdf_csv,
)

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AssumptionError",
    "AssumptionReport",
    "CoefFn",
    "CoefficientTable",
    "FilterState",
    "FlowSeries",
    "InitialState",
    "LedgerRow",
    "McSummary",
    "ModelSpec",
    "NumericalError",
    "RiccatiSolution",
    "SCENARIO_NAMES",
    "SignalSpec",
    "TimeGrid",
    "ToxflowError",
    "TrajectoryRecord",
    "ValidationError",
    "as_coef",
    "b_proxy_pairs",
    "build_L",
    "build_coefficient_table",
    "check_assumptions",
    "compute_GHIJ",
    "default_grid",
    "dumps_config",
    "estimate_b_proxy",
    "estimate_sigma",
    "estimate_theta_daily",
    "eval_coef",
    "feedback_rate",
    "filter_step",
    "gateaux_residual",
    "initial_filter_state",
    "innovation_loadings",
    "load_config",
    "load_flow_csv",
    "loads_config",
    "perturbed_cost_gap",
    "pnl_decomposition",
    "run_montecarlo",
    "save_config",
    "scenario_preset",
    "signal_gain_gU",
    "simulate_path",
    "solve_S",
    "solve_phi_forward",
    "solve_riccati",
    "write_assumptions_json",
    "write_calibration_json",
    "write_flow_csv",
    "write_gains_csv",
    "write_histogram_csv",
    "write_mc_summary_json",
    "write_paths_csv",
    "write_riccati_csv",
    "write_theta_cdf_csv",
    "write_trajectory_csv",
]
