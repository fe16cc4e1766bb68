"""Right-hand sides, fixed-step integrators and the simulation loop.

Built-in controllers and disturbances run through a compiled kernel; external
controllers and open-loop inputs use the pure-Python loop.  Both paths share
the same arithmetic, so they agree bit for bit (see tests/test_dynamics.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numba
import numpy as np

from . import analysis
from .controllers import evaluate as _evaluate_controller
from .core import (
    Constant,
    ControllerSpec,
    DisturbanceSpec,
    ExternalController,
    Integrator,
    NlgExact,
    NlgRegularized,
    NlgThreshold,
    NonFiniteState,
    Pd,
    PlantState,
    Scenario,
    Sinusoid,
    TableLookup,
    Trajectory,
    Zero,
    check_scenario,
    numeric_floor,
)


# right-hand sides

def rhs_closed_loop(state: PlantState, controller: ControllerSpec, d: float) -> Tuple[float, float]:
    """Closed-loop vector field (x2, u(x) + d).

    For the exact law at the origin the Filippov selection is used: while
    |d| <= gamma the relay set [-gamma, gamma] contains -d, so the vector
    field is zero and the origin stays an equilibrium.
    """
    if (isinstance(controller, NlgExact) and state.x1 == 0.0 and state.x2 == 0.0
            and abs(d) <= controller.gamma):
        return (0.0, 0.0)
    return (state.x2, _evaluate_controller(controller, state) + d)


def rhs_aux(state: PlantState, gamma: float, d: float) -> Tuple[float, float]:
    """Auxiliary system obtained from the closed loop by the time change dt = |x1| dtau."""
    x1, x2 = state.x1, state.x2
    a = abs(x1)
    return (a * x2, -gamma * x1 - abs(x2) * x2 + a * d)


@dataclass(frozen=True)
class ClosedLoop:
    controller: ControllerSpec

    def __call__(self, x1, x2, d, t):
        return rhs_closed_loop(PlantState(x1, x2), self.controller, d)


@dataclass(frozen=True)
class OpenLoopWithInput:
    """Plant driven by an external input signal u(t)."""

    u: Callable[[float], float]

    def __call__(self, x1, x2, d, t):
        return (x2, float(self.u(t)) + d)


@dataclass(frozen=True)
class AuxSystem:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("AuxSystem needs gamma > 0")

    def __call__(self, x1, x2, d, t):
        return rhs_aux(PlantState(x1, x2), self.gamma, d)


RhsKind = Union[ClosedLoop, OpenLoopWithInput, AuxSystem]
Signal = Union[DisturbanceSpec, Callable[[float], float], float]


def _as_signal(d: Signal) -> Callable[[float], float]:
    if callable(d):
        return d
    c = float(d)
    return lambda t: c


def _finite_state(x1: float, x2: float, t: float) -> PlantState:
    if not (math.isfinite(x1) and math.isfinite(x2)):
        raise NonFiniteState(t)
    return PlantState(x1, x2)


# single steps

def step_forward_euler(state: PlantState, rhs, d: float, dt: float, t: float = 0.0) -> PlantState:
    """x + dt*f(x, d) with the disturbance sampled at the step start."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    f1, f2 = rhs(state.x1, state.x2, d, t)
    return _finite_state(state.x1 + dt * f1, state.x2 + dt * f2, t + dt)


def step_rk4(state: PlantState, rhs, d: Signal, dt: float, t: float = 0.0) -> PlantState:
    """Classical fourth-order Runge-Kutta step; d is sampled at the stage times."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    sig = _as_signal(d)
    x1, x2 = state.x1, state.x2
    h = 0.5 * dt
    dm = sig(t + h)
    a1, b1 = rhs(x1, x2, sig(t), t)
    a2, b2 = rhs(x1 + h * a1, x2 + h * b1, dm, t + h)
    a3, b3 = rhs(x1 + h * a2, x2 + h * b2, dm, t + h)
    a4, b4 = rhs(x1 + dt * a3, x2 + dt * b3, sig(t + dt), t + dt)
    n1 = x1 + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    n2 = x2 + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return _finite_state(n1, n2, t + dt)


# step-size guidance

def recommended_step(controller: ControllerSpec, D: float, initial: PlantState,
                     tolerance: float = 1e-3) -> Tuple[float, Optional[float]]:
    """Return (dt, mu) that keep a fixed-step run stable down to ``tolerance``.

    Near the origin the law behaves like a damping term with rate
    2*sqrt(z/|x1|), so the step has to shrink with sqrt(tolerance/z_cap).
    For the threshold and regularized laws mu must also stay well below
    tolerance^2/z_cap or the terminal chatter in x2 exceeds the band.
    mu is None for laws without a threshold.
    """
    gamma = controller.gamma
    x1, x2 = initial.x1, initial.x2
    z0 = x2 * x2 / abs(x1) if x1 != 0.0 else 0.0
    z_cap = max(z0, 2.0 * (D + gamma))
    approach = 0.05 * abs(x1) / abs(x2) if x2 != 0.0 and x1 != 0.0 else math.inf
    if isinstance(controller, (NlgThreshold, NlgRegularized)):
        mu = tolerance * tolerance / (16.0 * z_cap)
        dt = min(1e-4, 0.5 * math.sqrt(mu / z_cap), approach)
        return dt, mu
    dt = min(1e-4, 0.05 * math.sqrt(tolerance / z_cap), approach)
    return dt, None


# compiled kernel

_CTRL_CODES = {NlgExact: 0, NlgThreshold: 1, NlgRegularized: 2, Pd: 3}
_SYS_CLOSED, _SYS_AUX = 0, 1


@numba.njit(cache=True)
def _k_control(ck, x1, x2, gamma, mu, sigma):
    if ck == 3:
        return -gamma * x1 - sigma * x2
    if ck == 2:
        return -(gamma * x1 + abs(x2) * x2) / (abs(x1) + mu)
    if (ck == 0 and x1 != 0.0) or (ck == 1 and abs(x1) >= mu):
        return -(gamma * x1 + abs(x2) * x2) / abs(x1)
    if x1 > 0.0:
        return -gamma
    if x1 < 0.0:
        return gamma
    return 0.0


@numba.njit(cache=True)
def _k_dist(t, dk, dpar, tab_t, tab_d):
    if dk == 0:
        return 0.0
    if dk == 1:
        return dpar[0]
    if dk == 2:
        return dpar[0] * math.sin(dpar[1] * t + dpar[2])
    i = np.searchsorted(tab_t, t, side="right") - 1
    if i < 0:
        i = 0
    return tab_d[i]


@numba.njit(cache=True)
def _k_rhs(sysk, ck, x1, x2, d, gamma, mu, sigma):
    if sysk == 1:
        a = abs(x1)
        return a * x2, -gamma * x1 - abs(x2) * x2 + a * d, a
    if ck == 0 and x1 == 0.0 and x2 == 0.0 and abs(d) <= gamma:
        return 0.0, 0.0, 1.0
    return x2, _k_control(ck, x1, x2, gamma, mu, sigma) + d, 1.0


@numba.njit(cache=True)
def _k_grow(a, n):
    b = np.empty(n)
    b[:a.shape[0]] = a
    return b


@numba.njit(cache=True)
def _k_run(sysk, ck, gamma, mu, sigma, dk, dpar, tab_t, tab_d, x1, x2, dt, n,
           rk4, tol, dwell, stop, capture):
    """Integrate n steps.  Returns columns, sample count, convergence index
    (-1 if none) and the index of the first non-finite sample (-1 if none).

    For the closed loop the third state component is ignored and time is
    k*dt; for the aux system it accumulates phi = int |x1| dtau and the
    disturbance is evaluated at phi.
    """
    cap = min(n + 1, 1 << 16)
    X1 = np.empty(cap)
    X2 = np.empty(cap)
    P = np.empty(cap)
    X1[0] = x1
    X2[0] = x2
    P[0] = 0.0
    p = 0.0
    inb = 0
    conv = -1
    bad = -1
    last = n
    if max(abs(x1), abs(x2)) < tol:
        inb = 1
        if dwell <= 1:
            conv = 0
            if stop:
                last = 0
    h = 0.5 * dt
    for k in range(last):
        t = k * dt
        tq = p if sysk == 1 else t
        d0 = _k_dist(tq, dk, dpar, tab_t, tab_d)
        a1, b1, c1 = _k_rhs(sysk, ck, x1, x2, d0, gamma, mu, sigma)
        if rk4:
            tq = p + h * c1 if sysk == 1 else t + h
            dm = _k_dist(tq, dk, dpar, tab_t, tab_d)
            a2, b2, c2 = _k_rhs(sysk, ck, x1 + h * a1, x2 + h * b1, dm, gamma, mu, sigma)
            if sysk == 1:
                dm = _k_dist(p + h * c2, dk, dpar, tab_t, tab_d)
            a3, b3, c3 = _k_rhs(sysk, ck, x1 + h * a2, x2 + h * b2, dm, gamma, mu, sigma)
            tq = p + dt * c3 if sysk == 1 else t + dt
            de = _k_dist(tq, dk, dpar, tab_t, tab_d)
            a4, b4, c4 = _k_rhs(sysk, ck, x1 + dt * a3, x2 + dt * b3, de, gamma, mu, sigma)
            n1 = x1 + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            n2 = x2 + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            p = p + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        else:
            n1 = x1 + dt * a1
            n2 = x2 + dt * b1
            p = p + dt * c1
        if capture and x1 != 0.0 and abs(x1) < tol and (n1 == 0.0 or (n1 > 0.0) != (x1 > 0.0)):
            n1 = 0.0
            n2 = 0.0
        x1 = n1
        x2 = n2
        if k + 1 >= cap:
            cap = min(2 * cap, n + 1)
            X1 = _k_grow(X1, cap)
            X2 = _k_grow(X2, cap)
            P = _k_grow(P, cap)
        X1[k + 1] = x1
        X2[k + 1] = x2
        P[k + 1] = p
        if not (math.isfinite(x1) and math.isfinite(x2)):
            bad = k + 1
            return X1[:k + 2], X2[:k + 2], P[:k + 2], k + 2, conv, bad
        if max(abs(x1), abs(x2)) < tol:
            inb += 1
            if inb == dwell and conv < 0:
                conv = k + 2 - dwell
                if stop:
                    return X1[:k + 2], X2[:k + 2], P[:k + 2], k + 2, conv, bad
        else:
            inb = 0
    m = last + 1
    return X1[:m], X2[:m], P[:m], m, conv, bad


def _dist_codes(dist: DisturbanceSpec):
    k = dist.kind
    empty = np.zeros(1)
    if isinstance(k, Zero):
        return 0, np.zeros(3), empty, empty
    if isinstance(k, Constant):
        return 1, np.array([float(k.c), 0.0, 0.0]), empty, empty
    if isinstance(k, Sinusoid):
        return 2, np.array([k.amplitude, k.angular_frequency, k.phase], dtype=float), empty, empty
    if isinstance(k, TableLookup):
        return 3, np.zeros(3), k.times.astype(float), k.values.astype(float)
    raise TypeError(f"unknown disturbance kind {k!r}")


def _kernel_run(s: Scenario, aux: bool):
    c = s.controller
    ck = _CTRL_CODES[type(c)] if not aux else 0
    dk, dpar, tab_t, tab_d = _dist_codes(s.disturbance)
    return _k_run(
        _SYS_AUX if aux else _SYS_CLOSED, ck, float(c.gamma), float(getattr(c, "mu", 0.0)),
        float(getattr(c, "sigma", 0.0)), dk, dpar, tab_t, tab_d,
        s.initial.x1, s.initial.x2, float(s.dt), s.n_steps,
        s.integrator is Integrator.RK4, float(s.stop_tolerance), int(s.stop_dwell_steps),
        bool(s.stop_on_convergence), (not aux) and isinstance(c, NlgExact))


# pure-Python loop

def _python_run(s: Scenario, aux: bool, u_signal=None):
    c = s.controller
    dist = s.disturbance
    if aux:
        f = AuxSystem(c.gamma)
    elif u_signal is not None:
        f = OpenLoopWithInput(u_signal)
    else:
        f = ClosedLoop(c)
    rk4 = s.integrator is Integrator.RK4
    capture = (not aux) and isinstance(c, NlgExact)
    tol, dwell, n, dt = s.stop_tolerance, s.stop_dwell_steps, s.n_steps, s.dt
    h = 0.5 * dt
    x1, x2, p = s.initial.x1, s.initial.x2, 0.0
    X1, X2, P = [x1], [x2], [0.0]
    inb, conv, bad, last = 0, -1, -1, n
    if max(abs(x1), abs(x2)) < tol:
        inb = 1
        if dwell <= 1:
            conv = 0
            if s.stop_on_convergence:
                last = 0

    def rhs3(y1, y2, tq):
        # third component is d(phi)/d(tau) = |x1| for the aux system
        a, b = f(y1, y2, dist(tq), tq)
        return a, b, (abs(y1) if aux else 1.0)

    for k in range(last):
        t = k * dt
        a1, b1, c1 = rhs3(x1, x2, p if aux else t)
        if rk4:
            a2, b2, c2 = rhs3(x1 + h * a1, x2 + h * b1, p + h * c1 if aux else t + h)
            a3, b3, c3 = rhs3(x1 + h * a2, x2 + h * b2, p + h * c2 if aux else t + h)
            a4, b4, c4 = rhs3(x1 + dt * a3, x2 + dt * b3, p + dt * c3 if aux else t + dt)
            n1 = x1 + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            n2 = x2 + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            p = p + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        else:
            n1 = x1 + dt * a1
            n2 = x2 + dt * b1
            p = p + dt * c1
        if capture and x1 != 0.0 and abs(x1) < tol and (n1 == 0.0 or (n1 > 0.0) != (x1 > 0.0)):
            n1, n2 = 0.0, 0.0
        x1, x2 = n1, n2
        X1.append(x1)
        X2.append(x2)
        P.append(p)
        if not (math.isfinite(x1) and math.isfinite(x2)):
            bad = k + 1
            break
        if max(abs(x1), abs(x2)) < tol:
            inb += 1
            if inb == dwell and conv < 0:
                conv = k + 2 - dwell
                if s.stop_on_convergence:
                    break
        else:
            inb = 0
    return np.array(X1), np.array(X2), np.array(P), len(X1), conv, bad


# simulation

def _use_kernel(s: Scenario, backend: str) -> bool:
    if backend not in ("auto", "kernel", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    builtin = type(s.controller) in _CTRL_CODES
    if backend == "kernel" and not builtin:
        raise ValueError("the compiled kernel only supports built-in controllers")
    return backend != "python" and builtin


def _assemble(s: Scenario, X1, X2, P, m, conv, bad, aux: bool) -> Trajectory:
    dt = s.dt
    t = np.arange(m) * dt
    if bad >= 0:
        raise NonFiniteState(float(t[bad]), f"non-finite state at t={t[bad]!r} (step {bad})")
    c = s.controller
    gamma = c.gamma
    dist = s.disturbance
    times = P if aux else t
    d = _dist_vec(dist, times)
    if aux:
        u = _k_control_vec(0, X1, X2, float(gamma), 0.0, 0.0)
    elif isinstance(c, ExternalController):
        u = np.array([_evaluate_controller(c, PlantState(a, b)) for a, b in zip(X1, X2)])
    else:
        u = _control_vec(c, X1, X2)
    eps = analysis.default_epsilon(gamma, dist.bound_D)
    V = analysis.lyapunov_v_array(X1, X2, gamma, eps)
    zeta, z = analysis.auxiliary_variables(X1, X2, numeric_floor(c))
    conv_t = float(t[conv]) if conv >= 0 else None
    return Trajectory(
        scenario=s, t=t, x1=X1, x2=X2, u=u, d=d, V=V, zeta=zeta, z=z,
        converged_at=conv_t, epsilon=eps, phi=P if aux else None,
        converged_index=conv if conv >= 0 else None)


def _dist_vec(dist: DisturbanceSpec, times: np.ndarray) -> np.ndarray:
    k = dist.kind
    if isinstance(k, Zero):
        return np.zeros_like(times)
    if isinstance(k, Constant):
        return np.full_like(times, float(k.c))
    if isinstance(k, Sinusoid):
        # evaluated per element with math.sin so recorded values equal the kernel's
        return np.array([k.amplitude * math.sin(k.angular_frequency * float(tt) + k.phase) for tt in times])
    i = np.searchsorted(k.times, times, side="right") - 1
    return k.values[np.maximum(i, 0)]


def _control_vec(c: ControllerSpec, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Controller output per sample, same arithmetic as the scalar laws."""
    return _k_control_vec(_CTRL_CODES[type(c)], x1, x2, float(c.gamma),
                          float(getattr(c, "mu", 0.0)), float(getattr(c, "sigma", 0.0)))


@numba.njit(cache=True)
def _k_control_vec(ck, x1, x2, gamma, mu, sigma):
    out = np.empty(x1.shape[0])
    for i in range(x1.shape[0]):
        out[i] = _k_control(ck, x1[i], x2[i], gamma, mu, sigma)
    return out


def simulate(s: Scenario, backend: str = "auto", u_signal=None) -> Trajectory:
    """Run the closed loop described by ``s`` on a fixed grid t_k = k*dt.

    ``converged_at`` is the first sample time from which the max-norm of the
    state stays below ``stop_tolerance`` for ``stop_dwell_steps`` consecutive
    samples.  The run continues to t_end unless ``stop_on_convergence`` is set.

    With the exact law a step that starts inside the band |x1| < tolerance
    and carries x1 onto or across zero ends at the origin.  Exact solutions
    reach x1 = 0 only at the origin, where the Filippov selection holds them;
    an explicit step instead overshoots to |x1| ~ z*dt^2 and the next step
    diverges.  Crossings outside the band are left alone so the analysis can
    still see them.

    ``u_signal`` replaces the feedback law by an open-loop input u(t).
    """
    check_scenario(s)
    if u_signal is not None:
        X1, X2, P, m, conv, bad = _python_run(s, False, u_signal)
    elif _use_kernel(s, backend):
        X1, X2, P, m, conv, bad = _kernel_run(s, False)
    else:
        X1, X2, P, m, conv, bad = _python_run(s, False)
    traj = _assemble(s, X1, X2, P, m, conv, bad, aux=False)
    if u_signal is not None:
        traj.u = np.array([float(u_signal(float(tt))) for tt in traj.t])
    return traj


def simulate_aux(s: Scenario, backend: str = "auto") -> Trajectory:
    """Integrate the auxiliary system for the gain of ``s.controller``.

    The grid is in the scaled time tau (``traj.t``); the physical time
    phi(tau) = int |x1| dtau is integrated as a third state with the same
    scheme and stored in ``traj.phi``.  The disturbance is evaluated at phi.
    The ``u`` column holds the exact-law control at each state.
    """
    check_scenario(s, aux=True)
    if backend == "python":
        X1, X2, P, m, conv, bad = _python_run(s, True)
    else:
        X1, X2, P, m, conv, bad = _kernel_run(s, True)
    return _assemble(s, X1, X2, P, m, conv, bad, aux=True)
