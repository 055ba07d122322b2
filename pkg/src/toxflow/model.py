"""Model parameters, time-varying coefficient functions and the shared time grid.

Everything downstream (filter, control coefficients, simulation) is built on
top of a :class:`ModelSpec` and a :class:`TimeGrid`.  Both are immutable and
safe to share across worker processes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np


# ---- errors ----------------------------------------------------------------

class ToxflowError(Exception):
    """Base class for all package errors."""


class ValidationError(ToxflowError):
    """Invalid user input: bad config values, malformed files, bad arguments."""


class AssumptionError(ValidationError):
    """A model assumption failed numerically (non-invertible transition,
    vanishing denominator in the control coefficients, ...).  Carries the
    diagnostic report when one is available."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NumericalError(ToxflowError):
    """Internal numerical failure: blow-up, non-finite state, lost PSD-ness."""


# ---- coefficient functions ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoefFn:
    """Deterministic, bounded function of time on [0, T].

    Either a constant or a sampled table with linear interpolation between
    knots.  ``derivative`` is exact (zero) for constants and uses central
    finite differences on the knots for tables; the feedback response b
    enters the optimality system through b'/b when it varies in time.

    Parameters
    ----------
    value : float, optional
        Constant value.  Exactly one of ``value`` and ``knots`` is set.
    knots : ndarray, optional
        Strictly increasing sample times covering the evaluation domain.
    values : ndarray, optional
        Sample values, same length as ``knots``.
    """

    value: float | None = None
    knots: np.ndarray | None = None
    values: np.ndarray | None = None

    @staticmethod
    def constant(value: float) -> "CoefFn":
        return CoefFn(value=float(value))

    @staticmethod
    def from_table(knots, values) -> "CoefFn":
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValidationError("coefficient table needs matching 1-d knots/values, at least 2 points")
        if not np.all(np.diff(knots) > 0):
            raise ValidationError("coefficient table knots must be strictly increasing")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise ValidationError("coefficient table contains non-finite entries")
        return CoefFn(knots=knots, values=values)

    @property
    def is_constant(self) -> bool:
        return self.value is not None

    def _check_domain(self, t: np.ndarray) -> None:
        # tables must cover the evaluation window; constants are global
        if self.is_constant:
            return
        lo, hi = self.knots[0], self.knots[-1]
        tol = 1e-9 * (1.0 + hi - lo)
        if np.any(t < lo - tol) or np.any(t > hi + tol):
            raise ValidationError(
                f"time outside coefficient table domain [{lo}, {hi}]"
            )

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        self._check_domain(t_arr)
        if self.is_constant:
            out = np.full_like(t_arr, self.value)
        else:
            out = np.interp(t_arr, self.knots, self.values)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    @cached_property
    def _deriv_table(self) -> np.ndarray:
        # central differences inside, one-sided at the ends
        return np.gradient(self.values, self.knots)

    def derivative(self, t):
        t_arr = np.asarray(t, dtype=float)
        self._check_domain(t_arr)
        if self.is_constant:
            out = np.zeros_like(t_arr)
        else:
            out = np.interp(t_arr, self.knots, self._deriv_table)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def __eq__(self, other):
        if not isinstance(other, CoefFn):
            return NotImplemented
        if self.is_constant != other.is_constant:
            return False
        if self.is_constant:
            return self.value == other.value
        return np.array_equal(self.knots, other.knots) and np.array_equal(
            self.values, other.values
        )

    def __hash__(self):
        if self.is_constant:
            return hash(("const", self.value))
        return hash(("table", self.knots.tobytes(), self.values.tobytes()))


def as_coef(x) -> CoefFn:
    """Coerce a number or CoefFn to a CoefFn."""
    if isinstance(x, CoefFn):
        return x
    return CoefFn.constant(float(x))


def eval_coef(f: CoefFn, t) -> float:
    """Evaluate a coefficient function at time t (linear interpolation for tables)."""
    return f(t)


# ---- parameter containers ----------------------------------------------------

@dataclass(frozen=True)
class SignalSpec:
    """Price-predicting signal: drift A integrates an OU process U."""

    kappa: float
    ell: float
    nu: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "ell", "nu"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.kappa < 0 or self.ell < 0:
            raise ValidationError("signal requires kappa >= 0 and ell >= 0")


@dataclass(frozen=True)
class InitialState:
    """Initial inventory x, cumulative inflow z, toxicity theta0, impact y, price p."""

    x: float = 0.0
    z: float = 0.0
    theta0: float = 0.0
    y: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        for name in ("x", "z", "theta0", "y", "p"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.x, self.z, self.theta0, self.y, self.p)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError("initial state contains non-finite values")


@dataclass(frozen=True)
class ModelSpec:
    """Full parameterization of the unwind problem.

    Units follow the data convention: flow is normalized by average daily
    volume and time is measured in days, so sigma is ADV per sqrt(day),
    beta is 1/day and so on.

    Parameters
    ----------
    a, b, c, d : CoefFn or float
        Toxicity dynamics: d theta = (a theta + b q) dt + c dW_Z + d dW_theta.
    sigma : float
        Inflow volatility (> 0).
    sigma_m : float
        Martingale price volatility (>= 0).
    epsilon : float
        Instantaneous impact, price per unit rate (> 0).
    beta : float
        Transient impact decay rate (> 0).
    lam : float
        Transient impact push per unit volume (> 0).
    alpha : float
        Terminal inventory penalty (> 0).
    T : float
        Horizon in days (> 0).
    signal : SignalSpec, optional
        OU signal parameters; ``None`` means A = 0.
    initial : InitialState
        Starting values for the state variables.
    """

    a: CoefFn
    b: CoefFn
    c: CoefFn
    d: CoefFn
    sigma: float
    sigma_m: float
    epsilon: float
    beta: float
    lam: float
    alpha: float
    T: float
    signal: SignalSpec | None = None
    initial: InitialState = field(default_factory=InitialState)

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            object.__setattr__(self, name, as_coef(getattr(self, name)))
        for name in ("sigma", "sigma_m", "epsilon", "beta", "lam", "alpha", "T"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.sigma_m < 0:
            raise ValidationError("sigma_m must be nonnegative")
        for name in ("epsilon", "beta", "lam", "alpha", "T"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    def with_b(self, b) -> "ModelSpec":
        """Copy of the spec with the flow response coefficient b replaced."""
        return replace(self, b=as_coef(b))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * T / n_steps, k = 0..n_steps."""

    T: float
    n_steps: int

    def __post_init__(self):
        if self.T <= 0 or self.n_steps < 1:
            raise ValidationError("grid requires T > 0 and n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Grid index of a node time; rejects off-grid times."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(t - k * self.dt) > 1e-9 * max(1.0, self.T):
            raise ValidationError(f"t={t} is not a node of the grid")
        return k


DEFAULT_N_STEPS = 1000


def default_grid(spec: ModelSpec, n_steps: int = DEFAULT_N_STEPS) -> TimeGrid:
    """The grid used throughout: 1000 steps over the spec horizon."""
    return TimeGrid(T=spec.T, n_steps=n_steps)


# ---- scenario presets ----------------------------------------------------------

_SQRT_SCALE_3 = np.sqrt(0.02)

_COMMON_INITIAL = InitialState(x=0.0, z=0.0, theta0=0.1, y=0.0, p=1.27)


def scenario_preset(name: str) -> ModelSpec:
    """Named parameterizations of the three studied scenarios.

    reversion:    one day, toxicity reverts (a = -0.4), no signal.
    momentum:     identical, but toxicity drifts away (a = +0.4).
    short_signal: 0.02 day horizon, volatilities scaled by sqrt(0.02),
                  alpha = 1 and an OU signal (kappa = 0.02, ell = sqrt(0.02)).
    """
    base = dict(
        a=-0.4, b=-0.2, c=0.0, d=0.01,
        sigma=0.1, sigma_m=6.3e-3,
        epsilon=0.01, beta=10.0, lam=0.1, alpha=100.0,
        T=1.0, signal=None, initial=_COMMON_INITIAL,
    )
    if name == "reversion":
        return ModelSpec(**base)
    if name == "momentum":
        base["a"] = 0.4
        return ModelSpec(**base)
    if name == "short_signal":
        base.update(
            T=0.02,
            alpha=1.0,
            sigma=0.1 * _SQRT_SCALE_3,
            d=0.01 * _SQRT_SCALE_3,
            sigma_m=6.3e-3 * _SQRT_SCALE_3,
            signal=SignalSpec(kappa=0.02, ell=_SQRT_SCALE_3, nu=0.0),
        )
        return ModelSpec(**base)
    raise ValidationError(f"unknown scenario preset {name!r}")


SCENARIO_NAMES = ("reversion", "momentum", "short_signal")


# ---- config file I/O -----------------------------------------------------------
#
# Flat key-value text format.  Constants are plain numbers, tabulated
# coefficients are inline (t, value) pair lists:
#
#   a = -0.4
#   b = (0.0, -0.1) (0.5, -0.2) (1.0, -0.3)
#
# Keys match the model field names; `lambda` and `sigma_M` are written in
# that spelling and `lam` / `sigma_m` are accepted as aliases on load.

_COEF_KEYS = ("a", "b", "c", "d")
_SCALAR_KEYS = ("sigma", "sigma_M", "epsilon", "beta", "lambda", "alpha", "T")
_INITIAL_KEYS = ("x", "z", "theta0", "y", "p")
_SIGNAL_KEYS = ("kappa", "ell", "nu")
_KEY_ALIASES = {"lam": "lambda", "sigma_m": "sigma_M"}

_PAIR_RE = re.compile(r"\(\s*([^,()\s]+)\s*,\s*([^,()\s]+)\s*\)")


def _format_coef(f: CoefFn) -> str:
    if f.is_constant:
        return repr(f.value)
    pairs = " ".join(f"({float(t)!r}, {float(v)!r})" for t, v in zip(f.knots, f.values))
    return pairs


def dumps_config(spec: ModelSpec) -> str:
    lines = ["# toxflow model configuration"]
    for key in _COEF_KEYS:
        lines.append(f"{key} = {_format_coef(getattr(spec, key))}")
    lines.append(f"sigma = {spec.sigma!r}")
    lines.append(f"sigma_M = {spec.sigma_m!r}")
    lines.append(f"epsilon = {spec.epsilon!r}")
    lines.append(f"beta = {spec.beta!r}")
    lines.append(f"lambda = {spec.lam!r}")
    lines.append(f"alpha = {spec.alpha!r}")
    lines.append(f"T = {spec.T!r}")
    ini = spec.initial
    for key in _INITIAL_KEYS:
        lines.append(f"{key} = {getattr(ini, key)!r}")
    if spec.signal is not None:
        for key in _SIGNAL_KEYS:
            lines.append(f"{key} = {getattr(spec.signal, key)!r}")
    return "\n".join(lines) + "\n"


def save_config(spec: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_config(spec))


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if raw.startswith("("):
        pairs = _PAIR_RE.findall(raw)
        if not pairs:
            raise ValidationError(f"config key {key}: malformed table {raw!r}")
        knots = [float(t) for t, _ in pairs]
        values = [float(v) for _, v in pairs]
        return CoefFn.from_table(knots, values)
    try:
        return float(raw)
    except ValueError as exc:
        raise ValidationError(f"config key {key}: cannot parse {raw!r}") from exc


def loads_config(text: str) -> ModelSpec:
    entries: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        known = _COEF_KEYS + _SCALAR_KEYS + _INITIAL_KEYS + _SIGNAL_KEYS
        if key not in known:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ValidationError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = _parse_value(key, raw)

    missing = [k for k in _COEF_KEYS + _SCALAR_KEYS if k not in entries]
    if missing:
        raise ValidationError(f"config is missing keys: {', '.join(missing)}")
    for key in _COEF_KEYS:
        if not isinstance(entries[key], CoefFn):
            entries[key] = CoefFn.constant(entries[key])

    signal = None
    if any(k in entries for k in _SIGNAL_KEYS):
        if "kappa" not in entries or "ell" not in entries:
            raise ValidationError("signal config needs both kappa and ell")
        signal = SignalSpec(
            kappa=entries["kappa"], ell=entries["ell"], nu=entries.get("nu", 0.0)
        )

    initial = InitialState(**{k: entries.get(k, 0.0) for k in _INITIAL_KEYS})
    return ModelSpec(
        a=entries["a"], b=entries["b"], c=entries["c"], d=entries["d"],
        sigma=entries["sigma"], sigma_m=entries["sigma_M"],
        epsilon=entries["epsilon"], beta=entries["beta"], lam=entries["lambda"],
        alpha=entries["alpha"], T=entries["T"],
        signal=signal, initial=initial,
    )


def load_config(path) -> ModelSpec:
    with open(path) as fh:
        return loads_config(fh.read())
