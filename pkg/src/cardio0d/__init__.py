"""Closed-loop 0D cardiovascular circulation with an energy ledger.

The package integrates a lumped-parameter model of the four heart chambers,
their valves and the systemic / pulmonary RLC networks, evaluates every
storage, active, external and dissipative power term, and can replace the
left-ventricle elastance law by an external chamber coupled through the LV
pressure acting as a Lagrange multiplier.
"""

from .circulation import (
    CirculationState,
    DerivedState,
    default_initial_state,
    derived_state,
    derived_state_reduced,
    rhs,
    rhs_full,
    rhs_reduced,
    total_blood_volume,
)
from .config import RunConfig, default_config_text, load_config, parse_config
from .coupling import (
    CouplingConfig,
    ElastanceChamber,
    ExternalChamber,
    NonlinearChamber,
    boundary_work,
    make_chamber,
    simulate_coupled,
    solve_coupled_step,
)
from .energy import (
    ClinicalEstimate,
    EnergySnapshot,
    WorkSummary,
    balance_residual,
    clinical_work_estimate,
    energy_snapshot,
    work_integrals,
)
from .errors import (
    Cardio0DError,
    ChamberError,
    ConfigError,
    CouplingConvergenceError,
    CouplingError,
    IntegrationError,
    NonPeriodicError,
)
from .output import read_timeseries, write_report, write_timeseries
from .params import (
    ChamberParams,
    CompartmentParams,
    ExternalPressure,
    ModelParams,
    ValveParams,
    physiological_default,
)
from .timeloop import SolverConfig, Trajectory, detect_periodic_regime, run_to_periodic, simulate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
