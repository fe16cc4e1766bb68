"""Control laws.  Each is a pure function of the state and its gains."""

from __future__ import annotations

from .core import (
    ControllerSpec,
    ExternalController,
    NlgExact,
    NlgRegularized,
    NlgThreshold,
    Pd,
    PlantState,
    sign,
)


def nlg_exact(state: PlantState, gamma: float) -> float:
    """u = -(gamma*x1 + |x2|*x2) / |x1|, and -gamma*sign(x1) on x1 = 0."""
    x1, x2 = state.x1, state.x2
    if x1 != 0.0:
        return -(gamma * x1 + abs(x2) * x2) / abs(x1)
    return -gamma * sign(x1)


def nlg_threshold(state: PlantState, gamma: float, mu: float) -> float:
    """Exact law while |x1| >= mu, relay -gamma*sign(x1) inside the band."""
    x1, x2 = state.x1, state.x2
    if abs(x1) >= mu:
        return -(gamma * x1 + abs(x2) * x2) / abs(x1)
    return -gamma * sign(x1)


def nlg_regularized(state: PlantState, gamma: float, mu: float) -> float:
    """Exact law with |x1| replaced by |x1| + mu in the denominator."""
    x1, x2 = state.x1, state.x2
    return -(gamma * x1 + abs(x2) * x2) / (abs(x1) + mu)


def pd_control(state: PlantState, gamma: float, sigma: float) -> float:
    return -gamma * state.x1 - sigma * state.x2


def evaluate(controller: ControllerSpec, state: PlantState) -> float:
    """Dispatch on the controller spec."""
    if isinstance(controller, NlgExact):
        return nlg_exact(state, controller.gamma)
    if isinstance(controller, NlgThreshold):
        return nlg_threshold(state, controller.gamma, controller.mu)
    if isinstance(controller, NlgRegularized):
        return nlg_regularized(state, controller.gamma, controller.mu)
    if isinstance(controller, Pd):
        return pd_control(state, controller.gamma, controller.sigma)
    if isinstance(controller, ExternalController):
        return float(controller.fn(state))
    raise TypeError(f"unknown controller {controller!r}")
