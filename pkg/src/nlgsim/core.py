"""Domain types shared by the simulator, the controllers and the analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

#: Numeric floor below which zeta and z are recorded as absent.
DEFAULT_MU = 1e-9


def sign(x: float) -> float:
    """Sign with sign(0) = 0."""
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


# errors

class NlgSimError(Exception):
    """Base class for errors raised by this package."""


class ScenarioError(NlgSimError, ValueError):
    """A scenario failed validation; carries the diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        msg = "; ".join(f"{d.code}: {d.message}" for d in self.diagnostics if d.is_error)
        super().__init__(msg or "invalid scenario")


class NonFiniteState(NlgSimError, ArithmeticError):
    """An integration step produced NaN or infinity."""

    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"non-finite state at t={t!r}")


class NegativeD(NlgSimError, ValueError):
    pass


class EmptyWindow(NlgSimError, ValueError):
    pass


class OnSwitchingLine(NlgSimError, ValueError):
    pass


class InitialX1Zero(NlgSimError, ValueError):
    pass


class EmptyTrajectory(NlgSimError, ValueError):
    pass


class NoOverlap(NlgSimError, ValueError):
    pass


# state

@dataclass(frozen=True)
class PlantState:
    """Plant state: output x1 and its time derivative x2."""

    x1: float
    x2: float

    def __post_init__(self):
        if not (math.isfinite(self.x1) and math.isfinite(self.x2)):
            raise ValueError(f"state must be finite, got ({self.x1}, {self.x2})")
        object.__setattr__(self, "x1", float(self.x1))
        object.__setattr__(self, "x2", float(self.x2))

    def __neg__(self) -> "PlantState":
        return PlantState(-self.x1, -self.x2)

    def norm_inf(self) -> float:
        return max(abs(self.x1), abs(self.x2))

    def in_domain(self) -> bool:
        """True on {x1 != 0} or at the origin."""
        return self.x1 != 0.0 or self.x2 == 0.0

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x1, self.x2)


ORIGIN = PlantState(0.0, 0.0)


# disturbances

@dataclass(frozen=True)
class Zero:
    pass


@dataclass(frozen=True)
class Constant:
    c: float


@dataclass(frozen=True)
class Sinusoid:
    """d(t) = amplitude * sin(angular_frequency * t + phase)."""

    amplitude: float
    angular_frequency: float
    phase: float = 0.0


@dataclass(frozen=True)
class TableLookup:
    """Piecewise-constant disturbance from (t, d) samples.

    The value at t is the last sample with time <= t; before the first
    sample time the first value is held.
    """

    samples: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(t), float(d)) for t, d in self.samples)
        if not pts:
            raise ValueError("TableLookup needs at least one sample")
        ts = [t for t, _ in pts]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("TableLookup sample times must strictly increase")
        object.__setattr__(self, "samples", pts)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([d for _, d in self.samples])


DisturbanceKind = Union[Zero, Constant, Sinusoid, TableLookup]


@dataclass(frozen=True)
class DisturbanceSpec:
    """A disturbance signal together with its declared bound D."""

    kind: DisturbanceKind
    bound_D: float

    def __post_init__(self):
        if not (self.bound_D > 0 and math.isfinite(self.bound_D)):
            raise ValueError(f"bound_D must be positive and finite, got {self.bound_D}")
        k = self.kind
        if isinstance(k, Constant):
            peak = abs(k.c)
        elif isinstance(k, Sinusoid):
            peak = abs(k.amplitude)
        elif isinstance(k, TableLookup):
            peak = max(abs(d) for _, d in k.samples)
        elif isinstance(k, Zero):
            peak = 0.0
        else:
            raise TypeError(f"unknown disturbance kind {k!r}")
        if not math.isfinite(peak) or peak > self.bound_D:
            raise ValueError(f"disturbance peak {peak} exceeds bound_D={self.bound_D}")

    def __call__(self, t: float) -> float:
        k = self.kind
        if isinstance(k, Zero):
            return 0.0
        if isinstance(k, Constant):
            return float(k.c)
        if isinstance(k, Sinusoid):
            return k.amplitude * math.sin(k.angular_frequency * t + k.phase)
        ts = k.samples
        i = int(np.searchsorted(k.times, t, side="right")) - 1
        return ts[max(i, 0)][1]

    def negated(self) -> "DisturbanceSpec":
        k = self.kind
        if isinstance(k, Constant):
            k = Constant(-k.c)
        elif isinstance(k, Sinusoid):
            k = Sinusoid(-k.amplitude, k.angular_frequency, k.phase)
        elif isinstance(k, TableLookup):
            k = TableLookup(tuple((t, -d) for t, d in k.samples))
        return DisturbanceSpec(k, self.bound_D)


def zero_disturbance(D: float = 1.0) -> DisturbanceSpec:
    return DisturbanceSpec(Zero(), D)


# controllers

@dataclass(frozen=True)
class NlgExact:
    gamma: float

    def __post_init__(self):
        _check_positive("gamma", self.gamma)


@dataclass(frozen=True)
class NlgThreshold:
    gamma: float
    mu: float = DEFAULT_MU

    def __post_init__(self):
        _check_positive("gamma", self.gamma)
        _check_positive("mu", self.mu)


@dataclass(frozen=True)
class NlgRegularized:
    gamma: float
    mu: float = DEFAULT_MU

    def __post_init__(self):
        _check_positive("gamma", self.gamma)
        _check_positive("mu", self.mu)


@dataclass(frozen=True)
class Pd:
    gamma: float
    sigma: float

    def __post_init__(self):
        _check_positive("gamma", self.gamma)
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class ExternalController:
    """User-supplied feedback law ``fn(state) -> u``.

    ``gamma`` is the nominal gain used for validation and bounds.
    Simulations with an external law run on the pure-Python path.
    """

    fn: Callable[[PlantState], float]
    gamma: float
    name: str = "external"

    def __post_init__(self):
        _check_positive("gamma", self.gamma)


ControllerSpec = Union[NlgExact, NlgThreshold, NlgRegularized, Pd, ExternalController]
NLG_KINDS = (NlgExact, NlgThreshold, NlgRegularized)


def _check_positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value}")


def numeric_floor(controller: ControllerSpec) -> float:
    """|x1| below which zeta and z are not recorded."""
    return getattr(controller, "mu", DEFAULT_MU)


# scenario

class Integrator(str, Enum):
    EULER = "euler"
    RK4 = "rk4"


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one simulation run."""

    initial: PlantState
    controller: ControllerSpec
    disturbance: DisturbanceSpec
    dt: float = 1e-5
    t_end: float = 1.0
    integrator: Integrator = Integrator.EULER
    stop_tolerance: float = 1e-3
    stop_dwell_steps: int = 100
    stop_on_convergence: bool = False

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        _check_positive("t_end", self.t_end)
        _check_positive("stop_tolerance", self.stop_tolerance)
        if int(self.stop_dwell_steps) != self.stop_dwell_steps or self.stop_dwell_steps < 1:
            raise ValueError("stop_dwell_steps must be an integer >= 1")
        if self.dt > 0 and not self.dt < self.t_end:
            raise ValueError(f"dt={self.dt} must be smaller than t_end={self.t_end}")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))

    @property
    def gamma(self) -> float:
        return self.controller.gamma

    @property
    def D(self) -> float:
        return self.disturbance.bound_D

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)

    def mirrored(self) -> "Scenario":
        """Same scenario started from -x(0) under -d."""
        return self.replace(initial=-self.initial, disturbance=self.disturbance.negated())


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    code: str
    message: str

    @property
    def is_error(self) -> bool:
        return self.severity == "error"


def validate_scenario(s: Scenario) -> list:
    """Return the diagnostics for ``s``; it is runnable iff none is an error."""
    from .analysis import gain_lower_bound

    out = []
    D = s.disturbance.bound_D
    gamma = s.controller.gamma
    nlg = isinstance(s.controller, NLG_KINDS)
    if not s.dt > 0:
        out.append(Diagnostic("error", "NonPositiveStep", f"dt must be positive, got {s.dt}"))
    if nlg and gamma <= D:
        out.append(Diagnostic("error", "GammaTooSmall", f"gamma={gamma} must exceed D={D}"))
    if nlg and not s.initial.in_domain():
        out.append(Diagnostic(
            "error", "InitialStateOutsideDomain",
            f"x1(0)=0 with x2(0)={s.initial.x2} lies outside the admissible domain"))
    if nlg and D < gamma <= gain_lower_bound(D):
        out.append(Diagnostic(
            "warning", "GainBelowSufficientBound",
            f"gamma={gamma} <= D^1.5 + D + 0.5 = {gain_lower_bound(D):.6g}; "
            "convergence is not guaranteed by the Lyapunov argument"))
    z0 = s.initial.x2 ** 2 / abs(s.initial.x1) if s.initial.x1 != 0 else 0.0
    z_cap = max(z0, 2 * (D + gamma))
    if isinstance(s.controller, NlgExact) and s.dt > 0:
        # the last step before x1 reaches zero lands at |x1| ~ z*dt^2; it has
        # to fall inside the tolerance band to be captured at the origin
        limit = 0.5 * math.sqrt(s.stop_tolerance / z_cap)
        if s.dt > limit:
            out.append(Diagnostic(
                "warning", "StepTooCoarse",
                f"dt={s.dt:.3g} exceeds 0.5*sqrt(stop_tolerance/z_cap)={limit:.3g}; "
                "the run may diverge near the origin"))
    if isinstance(s.controller, (NlgThreshold, NlgRegularized)) and s.dt > 0:
        if z_cap * s.dt ** 2 > s.controller.mu:
            out.append(Diagnostic(
                "warning", "StepTooCoarse",
                f"z_cap*dt^2={z_cap * s.dt ** 2:.3g} exceeds mu={s.controller.mu:.3g}; "
                "the terminal phase may diverge under a fixed step"))
    return out


def check_scenario(s: Scenario, aux: bool = False) -> list:
    """Raise ScenarioError on error diagnostics, else return the warnings.

    The auxiliary system is defined on the whole plane, so ``aux`` drops the
    domain rule for x1(0) = 0.
    """
    diags = validate_scenario(s)
    if aux:
        diags = [d for d in diags if d.code != "InitialStateOutsideDomain"]
    if any(d.is_error for d in diags):
        raise ScenarioError(diags)
    return diags


# trajectories

@dataclass(frozen=True)
class TrajectorySample:
    t: float
    state: PlantState
    u: float
    d: float
    V: float
    zeta: Optional[float]
    z: Optional[float]


def _opt(v: float) -> Optional[float]:
    return None if math.isnan(v) else float(v)


@dataclass(eq=False)
class Trajectory:
    """Columnar record of one run.

    Rows are samples; ``zeta`` and ``z`` hold NaN where absent.  Aux-system
    runs use ``t`` for the scaled time and carry the physical time in ``phi``.
    """

    scenario: Scenario
    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    u: np.ndarray
    d: np.ndarray
    V: np.ndarray
    zeta: np.ndarray
    z: np.ndarray
    converged_at: Optional[float] = None
    epsilon: float = float("nan")
    phi: Optional[np.ndarray] = None
    converged_index: Optional[int] = None
    columns: Tuple[str, ...] = field(default=("t", "x1", "x2", "u", "d", "V", "zeta", "z"), repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> TrajectorySample:
        return TrajectorySample(
            float(self.t[i]), PlantState(self.x1[i], self.x2[i]), float(self.u[i]),
            float(self.d[i]), float(self.V[i]), _opt(self.zeta[i]), _opt(self.z[i]))

    def __iter__(self) -> Iterator[TrajectorySample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> Sequence[TrajectorySample]:
        return list(self)

    @property
    def final_state(self) -> PlantState:
        return PlantState(self.x1[-1], self.x2[-1])

    def table(self) -> np.ndarray:
        """Samples as an (n, 8) array in CSV column order."""
        return np.column_stack([getattr(self, c) for c in self.columns])


# analysis report

@dataclass(frozen=True)
class AnalysisReport:
    overshoot_detected: bool
    sign_changes_of_x1: int
    convergence_time: Optional[float]
    lyapunov_violations: int
    max_abs_u: float
    control_bound_theoretical: float
    control_bound_satisfied: bool
    zeta_negative_after: Optional[float]
    z_bound_satisfied: bool
    epsilon_used: float
    lyapunov_checked_steps: int = 0
    lyapunov_skipped: bool = False
    z_max: float = 0.0
    z_cap: float = 0.0
    theta_empirical: Optional[float] = None
    kappa_empirical: Optional[float] = None

    @property
    def passed(self) -> bool:
        """True when every checked claim holds on the trajectory."""
        return (not self.overshoot_detected and self.lyapunov_violations == 0
                and self.control_bound_satisfied and self.z_bound_satisfied)

    def to_text(self) -> str:
        from dataclasses import fields

        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={_fmt_value(getattr(self, f.name))}")
        lines.append(f"passed={_fmt_value(self.passed)}")
        return "\n".join(lines) + "\n"


def _fmt_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)
