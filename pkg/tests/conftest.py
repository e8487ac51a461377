"""Shared fixtures: the expensive runs are computed once per session."""

from dataclasses import dataclass

import numpy as np
import pytest

from cardio0d.circulation import default_initial_state
from cardio0d.coupling import CouplingConfig, make_chamber, simulate_coupled
from cardio0d.params import physiological_default
from cardio0d.timeloop import SolverConfig, run_to_periodic, simulate


@dataclass(frozen=True)
class PeriodicBeat:
    params: object
    periodic: object
    beat: object  # Trajectory of one periodic beat at dt = 1e-4

    @property
    def t0(self):
        return self.periodic.beat_index * self.params.t_beat


@pytest.fixture(scope="session")
def params():
    return physiological_default()


@pytest.fixture(scope="session")
def periodic_beat(params):
    periodic = run_to_periodic(params, default_initial_state(), SolverConfig())
    assert periodic.converged
    t0 = periodic.beat_index * params.t_beat
    beat = simulate(params, periodic.state, 1, SolverConfig(), t0=t0)
    return PeriodicBeat(params, periodic, beat)


def _coupled(periodic_beat, kind, tol=1e-8):
    p = periodic_beat.params
    cc = CouplingConfig(make_chamber(kind, p), tol=tol)
    return simulate_coupled(p, periodic_beat.periodic.state, 1, SolverConfig(), cc,
                            t0=periodic_beat.t0)


@pytest.fixture(scope="session")
def coupled_elastance(periodic_beat):
    return _coupled(periodic_beat, "elastance")


@pytest.fixture(scope="session")
def coupled_nonlinear(periodic_beat):
    return _coupled(periodic_beat, "nonlinear")


@pytest.fixture(scope="session")
def coupled_tolerance_sweep(periodic_beat):
    """One coupled beat per root-find tolerance (elastance chamber)."""
    return {tol: _coupled(periodic_beat, "elastance", tol) for tol in (1e-2, 1e-3, 1e-4)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
