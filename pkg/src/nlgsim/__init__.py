"""Simulation and verification of a non-overshooting sliding-mode regulator
for perturbed double integrators."""

from .analysis import (
    LyapunovParams,
    RescalingResult,
    analyze,
    control_amplitude_bound,
    default_epsilon,
    epsilon_window,
    gain_lower_bound,
    lyapunov_decrease_bound,
    lyapunov_v,
    verify_time_rescaling,
)
from .controllers import nlg_exact, nlg_regularized, nlg_threshold, pd_control
from .core import (
    AnalysisReport,
    Constant,
    Diagnostic,
    DisturbanceSpec,
    ExternalController,
    Integrator,
    NlgExact,
    NlgRegularized,
    NlgThreshold,
    Pd,
    PlantState,
    Scenario,
    ScenarioError,
    NonFiniteState,
    Sinusoid,
    TableLookup,
    Trajectory,
    TrajectorySample,
    Zero,
    validate_scenario,
)
from .dynamics import (
    AuxSystem,
    ClosedLoop,
    OpenLoopWithInput,
    recommended_step,
    rhs_aux,
    rhs_closed_loop,
    simulate,
    simulate_aux,
    step_forward_euler,
    step_rk4,
)

__version__ = "0.1.0"
