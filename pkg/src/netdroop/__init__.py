"""Stability-constrained droop-coefficient design for inverters on radial feeders."""

from .control import (
    BoundInputs,
    InverterState,
    SimTrace,
    VoltVarCurve,
    baseline_ieee1547,
    baseline_sensitivity,
    controller_step,
    oscillation_index,
    project_setpoint,
    simulate,
    theorem1_bound,
)
from .design import (
    DesignConfig,
    DesignError,
    DroopGains,
    StabilityError,
    check_stability,
    design_p1,
    design_p2,
    fixed_point_iterate,
    fixed_point_voltage,
    neuman_error_sweep,
    neuman_matrix_error_sweep,
)
from .grid import (
    SYNTH_PRESETS,
    Bus,
    Feeder,
    FeederError,
    InverterSpec,
    Line,
    Scenario,
    ScenarioError,
    SynthConfig,
    builtin_feeder,
    load_feeder,
    load_scenario,
    save_feeder,
    save_scenario,
    synth_scenario,
)
from .linearize import LinearModel, RegressionError, estimate_delta, fit_linear_regression, linearize
from .pipeline import design_window, fit_window_model, run_loop
from .powerflow import PfSolution, PowerFlowError, VoltageCollapseError, solve_pf, solve_pf_newton
from .uncertainty import Forecast, UncertaintyError, UncertaintySet, build_box_set, forecast_mu, support_box_oracle, support_dual

__version__ = "0.1.0"
