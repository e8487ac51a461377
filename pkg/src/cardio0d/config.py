"""Line-oriented ``key = value`` run configuration.

Format
------
* one ``key = value`` pair per line; keys are dotted (``chamber.lv.e_pass``)
* ``#`` starts a comment, blank lines are ignored
* every key may appear at most once; unknown keys are rejected
* physical values use fixed units: mmHg, mL, s (and their products)

The model keys (``heart.*``, ``chamber.*``, ``valve.*``, ``circ.*`` and
``external.p_ex``) are required; ``init.*``, ``solver.*``, ``run.*`` and
``coupling.*`` are optional and fall back to :data:`OPTIONAL_DEFAULTS`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .circulation import CirculationState, default_initial_state
from .errors import ConfigError
from .params import (
    CHAMBERS,
    COMPARTMENTS,
    VALVES,
    ChamberParams,
    CompartmentParams,
    ExternalPressure,
    ModelParams,
    ValveParams,
)
from .timeloop import METHODS, SolverConfig

MODES = ("monolithic", "coupled")
CHAMBER_KINDS = ("elastance", "nonlinear")
REPORT_FORMATS = ("text", "json")

_CHAMBER_FIELDS = tuple(f.name for f in fields(ChamberParams))
_VALVE_FIELDS = tuple(f.name for f in fields(ValveParams))
_COMP_FIELDS = tuple(f.name for f in fields(CompartmentParams))

REQUIRED_KEYS = (
    ("heart.t_beat",)
    + tuple(f"chamber.{c}.{f}" for c in CHAMBERS for f in _CHAMBER_FIELDS)
    + tuple(f"valve.{v}.{f}" for v in VALVES for f in _VALVE_FIELDS)
    + tuple(f"circ.{c}.{f}" for c in COMPARTMENTS for f in _COMP_FIELDS)
    + ("external.p_ex",)
)

_defaults_solver = SolverConfig()
_defaults_init = default_initial_state()

OPTIONAL_DEFAULTS = {
    "external.p_ex_amplitude": 0.0,
    "external.p_ex_period": 1.0,
    **{f"init.{name}": getattr(_defaults_init, name) for name in CirculationState.names()},
    "solver.method": _defaults_solver.method,
    "solver.dt": _defaults_solver.dt,
    "solver.atol": _defaults_solver.atol,
    "solver.rtol": _defaults_solver.rtol,
    "solver.dt_max": _defaults_solver.dt_max,
    "solver.max_beats": _defaults_solver.max_beats,
    "solver.periodic_tol": _defaults_solver.periodic_tol,
    "solver.sample_stride": _defaults_solver.sample_stride,
    "run.mode": "monolithic",
    "run.beats": 30,
    "run.analyze_beats": 1,
    "run.to_periodic": 1,
    "run.output_dir": "out",
    "run.timeseries": "timeseries.csv",
    "run.report": "report",
    "run.report_format": "text",
    "coupling.chamber": "elastance",
    "coupling.tol": 1e-8,
    "coupling.max_iter": 100,
    "coupling.window": 1.0,
    "coupling.p_min": -50.0,
    "coupling.p_max": 1000.0,
    "coupling.nonlinear.alpha": 0.5,
    "coupling.nonlinear.beta": 0.025,
    "coupling.nonlinear.include_passive": 0,
}

# keys whose values are words rather than numbers
STRING_KEYS = frozenset({
    "solver.method", "run.mode", "run.output_dir", "run.timeseries", "run.report",
    "run.report_format", "coupling.chamber",
})
_INT_KEYS = frozenset({
    "solver.max_beats", "solver.sample_stride", "run.beats", "run.analyze_beats",
    "run.to_periodic", "coupling.max_iter", "coupling.nonlinear.include_passive",
})
_CHOICES = {
    "solver.method": METHODS,
    "run.mode": MODES,
    "run.report_format": REPORT_FORMATS,
    "coupling.chamber": CHAMBER_KINDS,
}

KNOWN_KEYS = frozenset(REQUIRED_KEYS) | frozenset(OPTIONAL_DEFAULTS)


@dataclass(frozen=True)
class ChamberSelection:
    """External chamber used in coupled mode and its options."""

    kind: str = "elastance"
    tol: float = 1e-8
    max_iter: int = 100
    window: float = 1.0
    p_min: float = -50.0
    p_max: float = 1000.0
    alpha: float = 0.5
    beta: float = 0.025
    include_passive: bool = False


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial_state: CirculationState = field(default_factory=default_initial_state)
    mode: str = "monolithic"
    chamber: ChamberSelection = field(default_factory=ChamberSelection)
    beats: int = 30
    analyze_beats: int = 1
    to_periodic: bool = True
    output_dir: Path = Path("out")
    timeseries_name: str = "timeseries.csv"
    report_name: str = "report"
    report_format: str = "text"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", key="run.mode")
        if self.chamber.kind not in CHAMBER_KINDS:
            raise ConfigError(f"unknown chamber {self.chamber.kind!r}", key="coupling.chamber")
        if self.report_format not in REPORT_FORMATS:
            raise ConfigError(f"unknown report format {self.report_format!r}",
                              key="run.report_format")
        if self.beats < 1:
            raise ConfigError("beats must be >= 1", key="run.beats")
        if not 1 <= self.analyze_beats <= self.beats:
            raise ConfigError(
                f"analyze_beats={self.analyze_beats} must lie in [1, beats={self.beats}]",
                key="run.analyze_beats",
            )

    @property
    def timeseries_path(self):
        return Path(self.output_dir) / self.timeseries_name

    @property
    def report_path(self):
        suffix = ".json" if self.report_format == "json" else ".txt"
        return Path(self.output_dir) / (self.report_name + suffix)

    def with_overrides(self, **changes):
        """Copy with command-line overrides applied; ``None`` values are ignored.

        Recognised names: ``beats``, ``analyze_beats``, ``dt``, ``method``,
        ``output_dir``, ``report_format``, ``mode``, ``chamber``, ``coupling_tol``.
        """
        changes = {k: v for k, v in changes.items() if v is not None}
        solver = self.solver
        chamber = self.chamber
        if "dt" in changes:
            solver = replace(solver, dt=float(changes.pop("dt")))
        if "method" in changes:
            solver = replace(solver, method=changes.pop("method"))
        if "chamber" in changes:
            chamber = replace(chamber, kind=changes.pop("chamber"))
        if "coupling_tol" in changes:
            chamber = replace(chamber, tol=float(changes.pop("coupling_tol")))
        if "output_dir" in changes:
            changes["output_dir"] = Path(changes["output_dir"])
        beats = changes.get("beats", self.beats)
        if "analyze_beats" not in changes and self.analyze_beats > beats:
            changes["analyze_beats"] = beats
        return replace(self, solver=solver, chamber=chamber, **changes)


def _parse_lines(text):
    """``{key: (raw value, line number)}`` with syntax and duplicate checks."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if not value:
            raise ConfigError("empty value", key=key, line=lineno)
        if key in entries:
            first = entries[key][1]
            raise ConfigError(f"duplicate key (first defined on line {first})", key=key, line=lineno)
        entries[key] = (value, lineno)
    return entries


def _convert(key, raw, lineno):
    if key in STRING_KEYS:
        choices = _CHOICES.get(key)
        if choices is not None and raw not in choices:
            raise ConfigError(f"value {raw!r} not in {choices}", key=key, line=lineno)
        return raw
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"non-numeric value {raw!r}", key=key, line=lineno) from None
    if not math.isfinite(value):
        raise ConfigError(f"non-finite value {raw!r}", key=key, line=lineno)
    if key in _INT_KEYS:
        if value != int(value):
            raise ConfigError(f"expected an integer, got {raw!r}", key=key, line=lineno)
        return int(value)
    return value


def _build(factory, prefix, names, values, lines):
    """Construct ``factory`` from ``prefix.name`` entries, relabelling errors."""
    try:
        return factory(**{n: values[f"{prefix}.{n}"] for n in names})
    except ConfigError as exc:
        key = exc.key if exc.key and "." in exc.key else f"{prefix}.{exc.key or names[0]}"
        msg = str(exc).split(": ", 1)[-1]
        raise ConfigError(msg, key=key, line=lines.get(key)) from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document into a :class:`RunConfig`."""
    entries = _parse_lines(text)
    unknown = sorted(set(entries) - KNOWN_KEYS)
    if unknown:
        key = unknown[0]
        raise ConfigError(f"unknown key (unknown keys: {', '.join(unknown)})",
                          key=key, line=entries[key][1])
    missing = [k for k in REQUIRED_KEYS if k not in entries]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    lines = {k: ln for k, (_, ln) in entries.items()}
    values = dict(OPTIONAL_DEFAULTS)
    values.update({k: _convert(k, raw, ln) for k, (raw, ln) in entries.items()})

    chambers = {c: _build(ChamberParams, f"chamber.{c}", _CHAMBER_FIELDS, values, lines)
                for c in CHAMBERS}
    valves = {v: _build(ValveParams, f"valve.{v}", _VALVE_FIELDS, values, lines) for v in VALVES}
    comps = {c: _build(CompartmentParams, f"circ.{c}", _COMP_FIELDS, values, lines)
             for c in COMPARTMENTS}
    try:
        p_ex = ExternalPressure(values["external.p_ex"], values["external.p_ex_amplitude"],
                                values["external.p_ex_period"])
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], key="external.p_ex_period",
                          line=lines.get("external.p_ex_period")) from None

    def relabel(build, default_key):
        try:
            return build()
        except ConfigError as exc:
            key = exc.key or default_key
            msg = str(exc).split(": ", 1)[-1]
            raise ConfigError(msg, key=key, line=lines.get(key)) from None

    params = relabel(lambda: ModelParams(chambers, valves, comps, values["heart.t_beat"], p_ex),
                     "heart.t_beat")
    solver = relabel(lambda: SolverConfig(
        dt=values["solver.dt"], method=values["solver.method"], atol=values["solver.atol"],
        rtol=values["solver.rtol"], max_beats=values["solver.max_beats"],
        periodic_tol=values["solver.periodic_tol"], sample_stride=values["solver.sample_stride"],
        dt_max=values["solver.dt_max"]), "solver.dt")
    relabel(lambda: solver.steps_per_beat(params.t_beat), "solver.dt")
    init = CirculationState(*(values[f"init.{n}"] for n in CirculationState.names()))
    chamber = ChamberSelection(
        kind=values["coupling.chamber"], tol=values["coupling.tol"],
        max_iter=values["coupling.max_iter"], window=values["coupling.window"],
        p_min=values["coupling.p_min"], p_max=values["coupling.p_max"],
        alpha=values["coupling.nonlinear.alpha"], beta=values["coupling.nonlinear.beta"],
        include_passive=bool(values["coupling.nonlinear.include_passive"]),
    )
    if not (chamber.tol > 0 and chamber.max_iter >= 1 and chamber.window > 0):
        key = next(k for k in ("coupling.tol", "coupling.max_iter", "coupling.window")
                   if not values[k] > 0)
        raise ConfigError("must be > 0", key=key, line=lines.get(key))
    if not chamber.p_min < chamber.p_max:
        raise ConfigError("coupling.p_min must be < coupling.p_max", key="coupling.p_min",
                          line=lines.get("coupling.p_min"))
    return relabel(lambda: RunConfig(
        params=params, solver=solver, initial_state=init, mode=values["run.mode"],
        chamber=chamber, beats=values["run.beats"], analyze_beats=values["run.analyze_beats"],
        to_periodic=bool(values["run.to_periodic"]), output_dir=Path(values["run.output_dir"]),
        timeseries_name=values["run.timeseries"], report_name=values["run.report"],
        report_format=values["run.report_format"]), "run.beats")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text)


def default_config_text() -> str:
    """Text of the shipped ``physiological-default`` document."""
    return resources.files("cardio0d").joinpath("data/physiological-default.cfg").read_text("utf-8")


def format_config(params: ModelParams, initial_state: CirculationState | None = None) -> str:
    """Render model parameters as a document accepted by :func:`parse_config`."""
    out = [f"heart.t_beat = {params.t_beat!r}"]
    for c in CHAMBERS:
        out += [f"chamber.{c}.{f} = {getattr(params.chambers[c], f)!r}" for f in _CHAMBER_FIELDS]
    for v in VALVES:
        out += [f"valve.{v}.{f} = {getattr(params.valves[v], f)!r}" for f in _VALVE_FIELDS]
    for c in COMPARTMENTS:
        out += [f"circ.{c}.{f} = {getattr(params.compartments[c], f)!r}" for f in _COMP_FIELDS]
    out.append(f"external.p_ex = {params.p_ex.mean!r}")
    if not params.p_ex.is_constant:
        out += [f"external.p_ex_amplitude = {params.p_ex.amplitude!r}",
                f"external.p_ex_period = {params.p_ex.period!r}"]
    if initial_state is not None:
        out += [f"init.{n} = {getattr(initial_state, n)!r}" for n in CirculationState.names()]
    return "\n".join(out) + "\n"
