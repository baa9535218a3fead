"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Input document or overrides violate a standing assumption."""


class MissingKey(ConfigError):
    def __init__(self, key):
        super().__init__(f"missing required key: {key}")
        self.key = key


class NonPositiveCoefficient(ConfigError):
    def __init__(self, name, value=None):
        super().__init__(f"coefficient {name} must be positive (got {value!r})")
        self.name = name
        self.value = value


class NegativeSchedule(ConfigError):
    def __init__(self, which="s", value=None):
        super().__init__(f"therapy schedule {which} must be nonnegative everywhere (min {value!r})")
        self.which = which
        self.value = value


class BcMismatch(ValueError):
    """Operator applied to a field stored on the wrong node layout."""


class ShapeMismatch(ValueError):
    pass


class SolverError(RuntimeError):
    """Base for numerical failures (CLI exit code 3)."""


class NoConvergence(SolverError):
    pass


class SolverDivergence(SolverError):
    pass


class CflViolation(SolverError):
    def __init__(self, dt, dt_max):
        super().__init__(f"dt={dt!r} exceeds dt_max={dt_max!r}")
        self.dt = dt
        self.dt_max = dt_max


class ConditionNotMet(ValueError):
    """Decay-rate condition fails; ``margin`` is negative."""

    def __init__(self, margin):
        super().__init__(f"decay condition not met (margin {margin:.6g})")
        self.margin = margin


class WindowTooShort(ValueError):
    pass


class SeriesUnderflow(ValueError):
    pass


class RunTooShort(ValueError):
    pass
