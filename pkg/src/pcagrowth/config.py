"""Model parameters, therapy schedules and run settings.

Documents are INI-style text with three sections::

    [params]
    lambda = 1.0
    eta = 1.0
    ...
    [therapy]
    u_times = [0.0, 5.0]
    u_values = [0.2, 0.0]
    s_values = [0.0]
    [run]
    n = [64]
    dt = auto
    t_end = 10.0

Scalars are plain numbers, lists are JSON arrays.  An optional ``[sweep]``
section (``name``, ``values``) declares a parameter axis for the sweep command.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, MissingKey, NegativeSchedule, NonPositiveCoefficient

# config key -> attribute name; "lambda" is a Python keyword
_PARAM_KEYS = {
    "lambda": "lam",
    "eta": "eta",
    "D": "D",
    "gamma_h": "gamma_h",
    "gamma_c": "gamma_c",
    "gamma_p": "gamma_p",
    "alpha_h": "alpha_h",
    "alpha_c": "alpha_c",
    "S_h": "S_h",
    "S_c": "S_c",
    "M": "M",
    "m_ref": "m_ref",
    "rho": "rho",
    "A": "A",
    "sigma_l": "sigma_l",
    "sigma_r": "sigma_r",
}
_PARAM_DEFAULTS = {"sigma_l": 0.0, "sigma_r": 1.0}
_POSITIVE = ("lam", "eta", "D", "gamma_h", "gamma_c", "gamma_p",
             "alpha_h", "alpha_c", "S_h", "S_c", "m_ref", "sigma_r")

INITIAL_KINDS = ("constant", "bump", "random", "steady")


@dataclass(frozen=True)
class ModelParams:
    lam: float
    eta: float
    D: float
    gamma_h: float
    gamma_c: float
    gamma_p: float
    alpha_h: float
    alpha_c: float
    S_h: float
    S_c: float
    M: float
    m_ref: float
    rho: float
    A: float
    sigma_l: float = 0.0
    sigma_r: float = 1.0

    @property
    def gamma_ch(self) -> float:
        return self.gamma_c - self.gamma_h

    @property
    def S_ch(self) -> float:
        return self.S_c - self.S_h

    @property
    def alpha_ch(self) -> float:
        return self.alpha_c - self.alpha_h

    @property
    def sigma_inf(self) -> float:
        """Spatially constant steady nutrient level."""
        return self.S_h / self.gamma_h

    @property
    def p_inf(self) -> float:
        return self.alpha_h / self.gamma_p

    def validate(self) -> "ModelParams":
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise NonPositiveCoefficient(_config_name(f.name), v)
        for name in _POSITIVE:
            v = getattr(self, name)
            if not v > 0:
                raise NonPositiveCoefficient(_config_name(name), v)
        # mobility may vanish (pure heat flow for phi) but not change sign
        if self.M < 0:
            raise NonPositiveCoefficient("M", self.M)
        return self


def _config_name(attr):
    return "lambda" if attr == "lam" else attr


@dataclass(frozen=True)
class Piecewise:
    """Piecewise-constant-in-time control.

    ``times`` are the start times of the pieces (first one 0).  Each piece is
    either a uniform level (``values``) or a per-cell profile on the interior
    node layout, stored flattened row-major in ``profiles``.
    """

    times: tuple = (0.0,)
    values: tuple = (0.0,)
    profiles: tuple | None = None

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if not times or times[0] != 0.0:
            raise ConfigError("schedule times must start at 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("schedule times must be strictly increasing")
        if self.profiles is not None:
            profiles = tuple(tuple(float(x) for x in row) for row in self.profiles)
            object.__setattr__(self, "profiles", profiles)
            object.__setattr__(self, "values", None)
            if len(profiles) != len(times):
                raise ConfigError("one profile per schedule piece required")
        else:
            values = tuple(float(v) for v in self.values)
            object.__setattr__(self, "values", values)
            if len(values) != len(times):
                raise ConfigError("one value per schedule piece required")

    def _pieces(self):
        return self.profiles if self.profiles is not None else self.values

    def piece_index(self, t: float) -> int:
        k = 0
        for i, start in enumerate(self.times):
            if t >= start:
                k = i
        return k

    def __call__(self, t: float, shape=None):
        """Value at time ``t``; a float, or an array of ``shape`` for profiles."""
        piece = self._pieces()[self.piece_index(t)]
        if self.profiles is None:
            return piece if shape is None else np.full(shape, piece)
        arr = np.asarray(piece, dtype=float)
        return arr if shape is None else arr.reshape(shape)

    @property
    def sup(self) -> float:
        if self.profiles is None:
            return max(abs(v) for v in self.values)
        return max(max(abs(x) for x in row) for row in self.profiles)

    @property
    def minimum(self) -> float:
        if self.profiles is None:
            return min(self.values)
        return min(min(row) for row in self.profiles)

    @property
    def cells(self) -> int | None:
        return None if self.profiles is None else len(self.profiles[0])


@dataclass(frozen=True)
class TherapySchedule:
    u: Piecewise = field(default_factory=Piecewise)
    s: Piecewise = field(default_factory=Piecewise)
    s_le_Sc: bool = True

    @property
    def u_sup(self) -> float:
        return self.u.sup

    @property
    def s_sup(self) -> float:
        return self.s.sup

    def validate(self, params: ModelParams | None = None) -> "TherapySchedule":
        for name, piece in (("u", self.u), ("s", self.s)):
            vals = piece.profiles if piece.profiles is not None else (piece.values,)
            if not all(math.isfinite(x) for row in vals for x in row):
                raise ConfigError(f"therapy {name} must be finite")
        if self.s.minimum < 0:
            raise NegativeSchedule("s", self.s.minimum)
        if params is not None and self.s_le_Sc != (self.s_sup <= params.S_c):
            raise ConfigError("s_le_Sc flag inconsistent with s_sup and S_c")
        return self

    def with_flag(self, params: ModelParams) -> "TherapySchedule":
        return replace(self, s_le_Sc=self.s_sup <= params.S_c)


@dataclass(frozen=True)
class RunConfig:
    n: tuple = (64,)
    L: tuple = (1.0,)
    dt: float = 0.01
    t_end: float = 10.0
    output_every: int = 1
    snapshot_every: int = 0
    initial: str = "random"
    phi0: float = 0.5
    sigma0: float = 0.5
    p0: float = 0.5
    seed: int = 0
    tau_bound: float = 1e-8
    eps_conv: float = 1e-6
    solver_rtol: float = 1e-11
    clamp: bool = False

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def validate(self) -> "RunConfig":
        if len(self.n) not in (1, 2) or len(self.L) != len(self.n):
            raise ConfigError("n and L must both have 1 or 2 entries")
        if any(int(k) < 3 for k in self.n):
            raise ConfigError("at least 3 interior cells per axis required")
        if any(not (x > 0) for x in self.L):
            raise ConfigError("domain lengths must be positive")
        if not (self.dt > 0) or not math.isfinite(self.dt):
            raise ConfigError("dt must be positive")
        if not (self.t_end >= self.dt):
            raise ConfigError("t_end must be at least dt")
        if abs(self.n_steps * self.dt - self.t_end) > 1e-9 * max(self.t_end, 1.0):
            raise ConfigError("t_end must be an integer multiple of dt")
        if self.output_every < 1 or self.n_steps % self.output_every:
            raise ConfigError("output_every must divide the step count")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if self.initial not in INITIAL_KINDS:
            raise ConfigError(f"initial must be one of {INITIAL_KINDS}")
        if not (0.0 <= self.phi0 <= 1.0):
            raise ConfigError("phi0 must lie in [0, 1]")
        for name in ("tau_bound", "eps_conv", "solver_rtol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        return self


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith("["):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad list value {raw!r}: {exc}") from None
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _parser(text: str, overrides: Sequence[str] = ()) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (S_h, D, A)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for item in overrides:
        apply_override(cp, item)
    return cp


def apply_override(cp: configparser.ConfigParser, item: str) -> None:
    """Apply ``section.key=value`` or ``key=value`` (key unique across sections)."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value: {item!r}")
    key, value = (s.strip() for s in item.split("=", 1))
    if "." in key:
        section, key = key.split(".", 1)
    else:
        owners = [s for s in cp.sections() if key in cp[s]]
        if not owners:
            owners = [_default_section(key)]
        if len(owners) > 1:
            raise ConfigError(f"override key {key!r} is ambiguous; use section.key")
        section = owners[0]
    if not cp.has_section(section):
        cp.add_section(section)
    cp[section][key] = value


def _default_section(key):
    if key in _PARAM_KEYS:
        return "params"
    if key.startswith(("u_", "s_")):
        return "therapy"
    return "run"


def _section(cp, name):
    return cp[name] if cp.has_section(name) else {}


def _number(sec, key, section_name, default=None):
    if key not in sec:
        if default is None:
            raise MissingKey(f"{section_name}.{key}")
        return default
    v = _parse_value(sec[key])
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section_name}.{key} must be a number, got {sec[key]!r}")
    return float(v)


def _list(sec, key, default):
    if key not in sec:
        return default
    v = _parse_value(sec[key])
    return v if isinstance(v, list) else [v]


def _piecewise(sec, prefix) -> Piecewise:
    times = _list(sec, f"{prefix}_times", [0.0])
    profiles = _list(sec, f"{prefix}_profiles", None)
    if profiles is not None:
        return Piecewise(times=times, values=None, profiles=profiles)
    values = _list(sec, f"{prefix}_values", [0.0] * len(times))
    return Piecewise(times=times, values=values)


def _run(sec, params, schedule) -> RunConfig:
    n = tuple(int(k) for k in _list(sec, "n", [64]))
    L = tuple(float(x) for x in _list(sec, "L", [1.0] * len(n)))
    t_end = _number(sec, "t_end", "run")
    raw_dt = sec.get("dt", "auto").strip()
    if raw_dt.lower() == "auto":
        from .stepper import dt_max

        if t_end <= 0:
            raise ConfigError("t_end must be positive")
        dt = t_end / math.ceil(t_end / dt_max(params, schedule) - 1e-12)
    else:
        dt = _number(sec, "dt", "run")
    kw = {}
    for key in ("phi0", "sigma0", "p0", "tau_bound", "eps_conv", "solver_rtol"):
        if key in sec:
            kw[key] = _number(sec, key, "run")
    for key in ("output_every", "snapshot_every", "seed"):
        if key in sec:
            v = _parse_value(sec[key])
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"run.{key} must be an integer")
            kw[key] = v
    if "initial" in sec:
        kw["initial"] = str(_parse_value(sec["initial"]))
    if "clamp" in sec:
        kw["clamp"] = bool(_parse_value(sec["clamp"]))
    return RunConfig(n=n, L=L, dt=dt, t_end=t_end, **kw).validate()


def load_config(text: str, overrides: Sequence[str] = ()):
    """Parse and validate a config document.

    Returns ``(params, schedule, run)``.  Raises :class:`MissingKey`,
    :class:`NonPositiveCoefficient` or :class:`NegativeSchedule` (all
    :class:`ConfigError`) on bad input.
    """
    cp = _parser(text, overrides)
    psec = _section(cp, "params")
    kw = {}
    for key, attr in _PARAM_KEYS.items():
        kw[attr] = _number(psec, key, "params", _PARAM_DEFAULTS.get(key))
    params = ModelParams(**kw).validate()

    tsec = _section(cp, "therapy")
    schedule = TherapySchedule(u=_piecewise(tsec, "u"), s=_piecewise(tsec, "s"))
    schedule = schedule.with_flag(params).validate(params)

    run = _run(_section(cp, "run"), params, schedule)
    cells = int(np.prod(run.n))
    for name, piece in (("u", schedule.u), ("s", schedule.s)):
        if piece.cells is not None and piece.cells != cells:
            raise ConfigError(f"{name}_profiles must have {cells} entries per piece")
    return params, schedule, run


def load_sweep_axis(text: str, overrides: Sequence[str] = ()) -> SweepAxis | None:
    cp = _parser(text, overrides)
    if not cp.has_section("sweep"):
        return None
    sec = cp["sweep"]
    if "name" not in sec:
        raise MissingKey("sweep.name")
    values = _list(sec, "values", [])
    return SweepAxis(name=sec["name"].strip(), values=tuple(values))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return json.dumps(list(v))
    return str(v)


def dump_config(params: ModelParams, schedule: TherapySchedule, run: RunConfig) -> str:
    """Serialize to the document format; ``load_config`` inverts it exactly."""
    lines = ["[params]"]
    for key, attr in _PARAM_KEYS.items():
        lines.append(f"{key} = {_fmt(float(getattr(params, attr)))}")
    lines.append("")
    lines.append("[therapy]")
    for prefix, piece in (("u", schedule.u), ("s", schedule.s)):
        lines.append(f"{prefix}_times = {_fmt(piece.times)}")
        if piece.profiles is not None:
            lines.append(f"{prefix}_profiles = {json.dumps([list(r) for r in piece.profiles])}")
        else:
            lines.append(f"{prefix}_values = {_fmt(piece.values)}")
    lines.append("")
    lines.append("[run]")
    for f in fields(run):
        lines.append(f"{f.name} = {_fmt(getattr(run, f.name))}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DecayCondition:
    holds: bool
    margin: float
    beta: float
    lhs: float
    rhs: float


def validate_decay_condition(params: ModelParams, lambda1: float, f_sup: float) -> DecayCondition:
    """Check ``lam*lambda1 >= gch^2 sinf^2/gh + ach^2/(2 gp) + 2 f_sup``.

    ``beta`` is the guaranteed decay rate of the squared deviation from the
    steady state; it is only meaningful when ``holds`` is true.
    """
    sigma_inf = params.S_h / params.gamma_h
    lhs = params.lam * lambda1
    rhs = (params.gamma_ch ** 2 * sigma_inf ** 2 / params.gamma_h
           + params.alpha_ch ** 2 / (2 * params.gamma_p)
           + 2 * f_sup)
    margin = lhs - rhs
    beta = min(margin, params.gamma_p / 2, params.gamma_h / 2)
    return DecayCondition(holds=margin >= 0, margin=margin, beta=beta, lhs=lhs, rhs=rhs)
