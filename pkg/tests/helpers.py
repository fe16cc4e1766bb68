"""Scenario builders shared by the test modules."""

import math

import numpy as np

from nlgsim import (
    Constant,
    DisturbanceSpec,
    NlgExact,
    PlantState,
    Scenario,
    Sinusoid,
    TableLookup,
    Zero,
    gain_lower_bound,
    recommended_step,
    simulate,
    simulate_aux,
    verify_time_rescaling,
)


def rescaling_deviation(gamma, D, x0, d_value, dt, integrator="rk4", aux_ratio=10, band=0.05):
    """Deviation between the rescaled aux run and the closed loop at step dt.

    The aux system is integrated with RK4 at dtau = aux_ratio*dt until its
    state enters the max-norm band; the closed loop then runs over the
    matching physical time.
    """
    dist = DisturbanceSpec(Constant(d_value) if d_value else Zero(), D)
    aux = simulate_aux(Scenario(
        PlantState(*x0), NlgExact(gamma), dist, dt=aux_ratio * dt, t_end=1e3, integrator="rk4",
        stop_tolerance=band, stop_dwell_steps=1, stop_on_convergence=True))
    t_end = float(aux.phi[-1])
    cl = simulate(Scenario(PlantState(*x0), NlgExact(gamma), dist, dt=dt, t_end=t_end,
                           integrator=integrator))
    return verify_time_rescaling(aux, cl, 1e-2)


def random_bounded_scenario(rng, i, tolerance=1e-3, integrator="rk4"):
    """Gain above the sufficient bound, D in (0, 50], |x0| <= 10 with x1 != 0.

    Disturbance kinds rotate through zero, constant, sinusoid, table and the
    constant push -D*sign(x1(0)) that maximizes z.
    """
    D = float(rng.uniform(0.0, 50.0)) or 50.0
    gamma = gain_lower_bound(D) * float(rng.uniform(1.001, 2.0))
    while True:
        r = 10.0 * math.sqrt(rng.uniform())
        th = rng.uniform(0.0, 2.0 * math.pi)
        x1, x2 = float(r * math.cos(th)), float(r * math.sin(th))
        if x1 != 0.0:
            break
    if i % 7 == 0:
        x2 = 0.0
    kind = i % 5
    if kind == 0:
        dk = Zero()
    elif kind == 1:
        dk = Constant(float(rng.uniform(-D, D)))
    elif kind == 2:
        dk = Sinusoid(float(rng.uniform(0, D)), float(rng.uniform(1, 200)), float(rng.uniform(0, 2 * math.pi)))
    elif kind == 3:
        ts = np.cumsum(rng.uniform(0.005, 0.05, size=20))
        dk = TableLookup(tuple(zip(ts.tolist(), rng.uniform(-D, D, size=20).tolist())))
    else:
        dk = Constant(-D * math.copysign(1.0, x1))
    ctrl = NlgExact(gamma)
    init = PlantState(x1, x2)
    dt, _ = recommended_step(ctrl, D, init, tolerance)
    return Scenario(init, ctrl, DisturbanceSpec(dk, D), dt=dt, t_end=20.0, integrator=integrator,
                    stop_tolerance=tolerance, stop_dwell_steps=100, stop_on_convergence=True)
