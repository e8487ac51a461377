"""Parameter records for the closed-loop circulation model.

Units are fixed throughout the package: pressure in mmHg, volume in mL,
time in s, flow in mL/s, resistance in mmHg*s/mL, compliance in mL/mmHg,
inertance in mmHg*s^2/mL, elastance in mmHg/mL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

CHAMBERS = ("la", "lv", "ra", "rv")
VALVES = ("mv", "av", "tv", "pv")
COMPARTMENTS = ("ar_sys", "ven_sys", "ar_pul", "ven_pul")

# 1 mmHg*mL in joules
MMHG_ML_TO_J = 1.33322e-4
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class ChamberParams:
    """Time-varying elastance chamber.

    The activation pulse starts at ``t_onset`` (modulo the heartbeat), rises
    over ``t_contract`` and decays over ``t_relax``.
    """

    e_pass: float
    e_act_max: float
    v0: float
    t_onset: float
    t_contract: float
    t_relax: float

    def __post_init__(self):
        if not self.e_pass > 0:
            raise ConfigError(f"e_pass must be > 0, got {self.e_pass}", key="e_pass")
        if not self.e_act_max >= 0:
            raise ConfigError(f"e_act_max must be >= 0, got {self.e_act_max}", key="e_act_max")
        if not self.v0 >= 0:
            raise ConfigError(f"v0 must be >= 0, got {self.v0}", key="v0")
        if not (self.t_contract > 0 and self.t_relax > 0):
            raise ConfigError("activation durations must be > 0", key="t_contract")
        if not self.t_onset >= 0:
            raise ConfigError(f"t_onset must be >= 0, got {self.t_onset}", key="t_onset")


@dataclass(frozen=True)
class ValveParams:
    r_min: float
    r_max: float

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max < math.inf):
            raise ConfigError(
                f"valve resistances must satisfy 0 < r_min < r_max < inf, "
                f"got r_min={self.r_min}, r_max={self.r_max}",
                key="r_min",
            )


@dataclass(frozen=True)
class CompartmentParams:
    r: float
    c: float
    l: float  # noqa: E741

    def __post_init__(self):
        for name in ("r", "c", "l"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value}", key=name)


@dataclass(frozen=True)
class ExternalPressure:
    """External (pericardial) pressure, constant or sinusoidal in time."""

    mean: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigError("external pressure period must be > 0", key="period")

    @property
    def is_constant(self):
        return self.amplitude == 0.0

    def at(self, t):
        if self.is_constant:
            return np.full(np.shape(t), self.mean) if np.ndim(t) else self.mean
        return self.mean + self.amplitude * np.sin(2.0 * np.pi * np.asarray(t) / self.period)


@dataclass(frozen=True)
class ModelParams:
    chambers: dict[str, ChamberParams]
    valves: dict[str, ValveParams]
    compartments: dict[str, CompartmentParams]
    t_beat: float
    p_ex: ExternalPressure = field(default_factory=ExternalPressure)

    def __post_init__(self):
        if not self.t_beat > 0:
            raise ConfigError(f"t_beat must be > 0, got {self.t_beat}", key="t_beat")
        for group, names in (
            (self.chambers, CHAMBERS),
            (self.valves, VALVES),
            (self.compartments, COMPARTMENTS),
        ):
            if set(group) != set(names):
                raise ConfigError(f"expected entries {names}, got {tuple(group)}")
        for name, ch in self.chambers.items():
            if ch.t_onset >= self.t_beat:
                raise ConfigError(
                    "activation onset must lie inside the heartbeat",
                    key=f"chamber.{name}.t_onset",
                )
            if ch.t_contract + ch.t_relax > self.t_beat:
                raise ConfigError(
                    "contraction + relaxation must fit inside one heartbeat",
                    key=f"chamber.{name}.t_contract",
                )

    def with_chamber(self, name, **changes):
        chambers = dict(self.chambers)
        chambers[name] = replace(chambers[name], **changes)
        return replace(self, chambers=chambers)

    def with_valve(self, name, **changes):
        valves = dict(self.valves)
        valves[name] = replace(valves[name], **changes)
        return replace(self, valves=valves)

    def with_compartment(self, name, **changes):
        comps = dict(self.compartments)
        comps[name] = replace(comps[name], **changes)
        return replace(self, compartments=comps)

    def to_vector(self):
        """Flatten into the float64 layout used by the compiled kernels.

        Layout: 4 chambers x (e_pass, e_act_max, v0, t_onset, t_contract,
        t_relax) in LA, LV, RA, RV order; 4 valves x (r_min, r_max) in
        MV, AV, TV, PV order; 4 compartments x (r, c, l) in AR-SYS, VEN-SYS,
        AR-PUL, VEN-PUL order; then t_beat, p_ex mean, amplitude, period.
        """
        out = []
        for name in CHAMBERS:
            ch = self.chambers[name]
            out += [ch.e_pass, ch.e_act_max, ch.v0, ch.t_onset, ch.t_contract, ch.t_relax]
        for name in VALVES:
            v = self.valves[name]
            out += [v.r_min, v.r_max]
        for name in COMPARTMENTS:
            c = self.compartments[name]
            out += [c.r, c.c, c.l]
        out += [self.t_beat, self.p_ex.mean, self.p_ex.amplitude, self.p_ex.period]
        return np.array(out, dtype=np.float64)


def physiological_default():
    """Parameter set tuned for textbook-range adult hemodynamics.

    LV elastances are 0.08 (passive) and 2.75 (active peak) mmHg/mL; every
    other value is a hand-calibrated choice aiming at systemic arterial
    pressure around 80-120 mmHg and a stroke volume of 60-80 mL.
    """
    t_beat = 0.8
    chambers = {
        "la": ChamberParams(e_pass=0.09, e_act_max=0.07, v0=4.0, t_onset=0.6, t_contract=0.1, t_relax=0.1),
        "lv": ChamberParams(e_pass=0.08, e_act_max=2.75, v0=5.0, t_onset=0.0, t_contract=0.28, t_relax=0.12),
        "ra": ChamberParams(e_pass=0.07, e_act_max=0.06, v0=4.0, t_onset=0.6, t_contract=0.1, t_relax=0.1),
        "rv": ChamberParams(e_pass=0.05, e_act_max=0.55, v0=10.0, t_onset=0.0, t_contract=0.28, t_relax=0.12),
    }
    valves = {name: ValveParams(r_min=0.0075, r_max=75006.2) for name in VALVES}
    compartments = {
        "ar_sys": CompartmentParams(r=1.0, c=1.4, l=5e-3),
        "ven_sys": CompartmentParams(r=0.12, c=30.0, l=5e-4),
        "ar_pul": CompartmentParams(r=0.1, c=8.0, l=5e-4),
        "ven_pul": CompartmentParams(r=0.05, c=16.0, l=5e-4),
    }
    return ModelParams(chambers, valves, compartments, t_beat, ExternalPressure(0.0))
