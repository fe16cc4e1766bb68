"""Lyapunov machinery, theoretical bounds and trajectory diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .core import (
    NLG_KINDS,
    AnalysisReport,
    EmptyTrajectory,
    EmptyWindow,
    InitialX1Zero,
    NegativeD,
    NoOverlap,
    OnSwitchingLine,
    PlantState,
    Trajectory,
)


@dataclass(frozen=True)
class LyapunovParams:
    """Gain and cross-term weight of V; positive definite for 0 < epsilon < sqrt(2*gamma)."""

    gamma: float
    epsilon: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < self.epsilon < math.sqrt(2.0 * self.gamma):
            raise ValueError(f"epsilon={self.epsilon} outside (0, sqrt(2*gamma))")


def gain_lower_bound(D: float) -> float:
    """Smallest gain for which the Lyapunov argument goes through: D^1.5 + D + 1/2."""
    if D < 0:
        raise NegativeD(f"D must be >= 0, got {D}")
    return D ** 1.5 + D + 0.5


def epsilon_window(gamma: float, D: float) -> Tuple[float, float]:
    """Open interval of cross-term weights that make V strictly decreasing."""
    if D < 0:
        raise NegativeD(f"D must be >= 0, got {D}")
    if not gamma > gain_lower_bound(D):
        raise EmptyWindow(f"gamma={gamma} <= {gain_lower_bound(D)}; no admissible epsilon")
    lo = (2.0 / 3.0) * D ** 1.5 / (gamma - 0.5 - D)
    hi = min(2.0 / 3.0, math.sqrt(2.0 * gamma))
    return lo, hi


def default_epsilon(gamma: float, D: float) -> float:
    """Window midpoint, or half the positive-definiteness limit when the window is empty."""
    try:
        lo, hi = epsilon_window(gamma, D)
        return 0.5 * (lo + hi)
    except EmptyWindow:
        return 0.5 * min(2.0 / 3.0, math.sqrt(2.0 * gamma))


def lyapunov_v_array(x1, x2, gamma: float, epsilon: float):
    """V = gamma|x1| + epsilon*sqrt|x1|*sign(x1)*x2 + x2^2/2, elementwise."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return gamma * np.abs(x1) + epsilon * np.sqrt(np.abs(x1)) * np.sign(x1) * x2 + 0.5 * x2 * x2


def lyapunov_v(state: PlantState, p: LyapunovParams) -> float:
    return float(lyapunov_v_array(state.x1, state.x2, p.gamma, p.epsilon))


def _decrease_bound_array(x1, x2, gamma, D, epsilon):
    a = np.abs(x1)
    with np.errstate(over="ignore"):
        return (-(2.0 / 3.0 - epsilon) * x2 * x2 * np.abs(x2) / a
                - (epsilon * (gamma - 0.5 - D) - (2.0 / 3.0) * D ** 1.5) * np.sqrt(a))


def lyapunov_decrease_bound(state: PlantState, D: float, p: LyapunovParams) -> float:
    """Upper bound on dV/dt along the closed loop at ``state``."""
    if state.x1 == 0.0:
        raise OnSwitchingLine("the decrease bound is not defined on x1 = 0")
    lo, hi = epsilon_window(p.gamma, D)
    if not lo < p.epsilon < hi:
        raise ValueError(f"epsilon={p.epsilon} outside the window ({lo}, {hi})")
    return float(_decrease_bound_array(state.x1, state.x2, p.gamma, D, p.epsilon))


def control_amplitude_bound(initial: PlantState, gamma: float, D: float) -> float:
    """gamma + max(x2(0)^2/|x1(0)|, 2(D + gamma)); equals 2D + 3gamma when x2(0) = 0."""
    if initial.x1 == 0.0:
        raise InitialX1Zero("the bound needs x1(0) != 0")
    return gamma + max(initial.x2 ** 2 / abs(initial.x1), 2.0 * (D + gamma))


def steady_start_control_bound(gamma: float, D: float) -> float:
    return 2.0 * D + 3.0 * gamma


def z_cap(initial: PlantState, gamma: float, D: float) -> float:
    z0 = initial.x2 ** 2 / abs(initial.x1) if initial.x1 != 0.0 else 0.0
    return max(z0, 2.0 * (D + gamma))


def auxiliary_variables(x1, x2, floor: float):
    """zeta = x2/x1 and z = x2^2/|x1|, NaN where |x1| < floor."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    ok = np.abs(x1) >= floor
    safe = np.where(ok, x1, 1.0)
    zeta = np.where(ok, x2 / safe, np.nan)
    z = np.where(ok, x2 * x2 / np.abs(safe), np.nan)
    return zeta, z


def _sign_changes(x1: np.ndarray, tol: float) -> int:
    s = np.sign(x1[np.abs(x1) >= tol])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def analyze(traj: Trajectory, D: Optional[float] = None,
            p: Union[LyapunovParams, str] = "auto") -> AnalysisReport:
    """Check the non-overshoot, Lyapunov, z and control-bound claims on ``traj``.

    The bound and Lyapunov checks use the convergence phase: samples before
    ``converged_at`` with |x1| >= stop_tolerance.  Inside the terminal band
    the fixed-step dynamics of every scheme depart from the continuous-time
    solution by design.  The sign test uses every sample with
    |x1| >= stop_tolerance.
    """
    if len(traj) == 0:
        raise EmptyTrajectory("trajectory has no samples")
    s = traj.scenario
    if not isinstance(s.controller, NLG_KINDS):
        raise ValueError("analyze expects a trajectory of one of the NLG laws")
    gamma = s.controller.gamma
    D = s.disturbance.bound_D if D is None else float(D)
    tol = s.stop_tolerance
    x1, x2, u, d, t = traj.x1, traj.x2, traj.u, traj.d, traj.t
    dt = s.dt

    n = len(traj)
    end = traj.converged_index if traj.converged_index is not None else n
    phase = np.zeros(n, dtype=bool)
    phase[:end] = np.abs(x1[:end]) >= tol

    changes = _sign_changes(x1, tol)

    initial = s.initial
    if initial.x1 != 0.0:
        u_bound = control_amplitude_bound(initial, gamma, D)
    else:
        u_bound = steady_start_control_bound(gamma, D)
    max_u = float(np.max(np.abs(u[phase]))) if phase.any() else 0.0
    u_ok = max_u <= u_bound + 1e-6 * max(1.0, u_bound)

    cap = z_cap(initial, gamma, D)
    with np.errstate(divide="ignore", invalid="ignore"):
        z_all = np.where(phase, x2 * x2 / np.abs(np.where(phase, x1, 1.0)), np.nan)
    z_max = float(np.nanmax(z_all)) if phase.any() else 0.0
    z_ok = z_max <= cap + 1e-6 * max(1.0, cap)

    # zeta stays negative from the first phase sample after the last non-negative one
    idx = np.flatnonzero(phase)
    zeta_after = None
    if idx.size:
        zeta_phase = x2[idx] / x1[idx]
        nonneg = np.flatnonzero(zeta_phase >= 0.0)
        if nonneg.size == 0:
            zeta_after = float(t[idx[0]])
        elif nonneg[-1] + 1 < idx.size:
            zeta_after = float(t[idx[nonneg[-1] + 1]])

    theta = None
    if zeta_after is not None:
        later = idx[t[idx] >= zeta_after]
        if later.size:
            theta = float(np.min(x2[later] ** 2 / np.abs(x1[later])))

    # Lyapunov decrease on steps whose start lies in the convergence phase
    skipped = False
    if p == "auto":
        try:
            lo, hi = epsilon_window(gamma, D)
            eps = 0.5 * (lo + hi)
        except EmptyWindow:
            skipped = True
            eps = traj.epsilon
    else:
        eps = p.epsilon
        try:
            lo, hi = epsilon_window(gamma, D)
            skipped = not lo < eps < hi
        except EmptyWindow:
            skipped = True
    violations = 0
    checked = 0
    kappa = None
    steps = idx[idx + 1 < n]
    if not skipped and steps.size:
        V = lyapunov_v_array(x1, x2, gamma, eps)
        a, b = x1[steps], x2[steps]
        rate = (V[steps + 1] - V[steps]) / dt
        bound = _decrease_bound_array(a, b, gamma, D, eps)
        allowance = 10.0 * dt * np.hypot(b, u[steps] + d[steps])
        violations = int(np.count_nonzero(rate > bound + allowance))
        checked = int(steps.size)
        if zeta_after is not None:
            after = (t[steps] >= zeta_after) & (V[steps] > 0)
            if after.any():
                kappa = float(np.min(-rate[after] / np.sqrt(V[steps][after])))

    return AnalysisReport(
        overshoot_detected=changes > 0,
        sign_changes_of_x1=changes,
        convergence_time=traj.converged_at,
        lyapunov_violations=violations,
        max_abs_u=max_u,
        control_bound_theoretical=u_bound,
        control_bound_satisfied=bool(u_ok),
        zeta_negative_after=zeta_after,
        z_bound_satisfied=bool(z_ok),
        epsilon_used=float(eps),
        lyapunov_checked_steps=checked,
        lyapunov_skipped=skipped,
        z_max=z_max,
        z_cap=cap,
        theta_empirical=theta,
        kappa_empirical=kappa,
    )


@dataclass(frozen=True)
class RescalingResult:
    deviation: float
    passed: bool
    overlap_end: float
    n_compared: int


def verify_time_rescaling(aux_traj: Trajectory, cl_traj: Trajectory, tolerance: float) -> RescalingResult:
    """Map aux samples (tau, x) to (phi(tau), x) and compare with the closed loop.

    The rescaled aux states are linearly interpolated onto the closed-loop
    grid over the common time range; the sup-norm state deviation is
    returned.
    """
    if aux_traj.phi is None:
        raise ValueError("first argument must come from simulate_aux")
    phi = aux_traj.phi
    t = cl_traj.t
    if len(t) == 0 or len(phi) == 0 or phi[-1] < t[0]:
        raise NoOverlap("rescaled aux time range ends before the closed-loop record starts")
    mask = t <= phi[-1]
    tc = t[mask]
    a1 = np.interp(tc, phi, aux_traj.x1)
    a2 = np.interp(tc, phi, aux_traj.x2)
    dev = np.maximum(np.abs(a1 - cl_traj.x1[mask]), np.abs(a2 - cl_traj.x2[mask]))
    worst = float(dev.max())
    return RescalingResult(worst, worst < tolerance, float(tc[-1]), int(tc.size))
