"""Exception hierarchy shared by the solver, coupling and CLI layers."""


class Cardio0DError(Exception):
    """Base class for all package errors."""


class ConfigError(Cardio0DError, ValueError):
    """Invalid configuration document or parameter set."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class IntegrationError(Cardio0DError, RuntimeError):
    """Time integration produced a non-finite or unphysiological state."""

    def __init__(self, message, t=None, component=None):
        self.t = t
        self.component = component
        super().__init__(message)


class CouplingError(Cardio0DError, RuntimeError):
    """The pressure multiplier could not be bracketed."""

    def __init__(self, message, t=None, residuals=None):
        self.t = t
        self.residuals = residuals
        super().__init__(message)


class CouplingConvergenceError(CouplingError):
    """Root-find iteration cap exceeded without meeting the volume tolerance."""


class ChamberError(CouplingError):
    """An external chamber failed to advance for a given trial pressure."""

    def __init__(self, message, p_lv=None, t=None):
        self.p_lv = p_lv
        super().__init__(message, t=t)


class NonPeriodicError(Cardio0DError, ValueError):
    """An analysis that assumes a periodic beat was given a drifting trajectory."""
