"""Acceptance criteria, one test (or small group) per criterion.

Each test prints a ``criterion N: PASS/FAIL | detail`` line through the
``acceptance`` fixture before asserting; the lines are repeated in the
terminal summary.
"""

import filecmp
import math
import time

import numpy as np
import pytest

import oracles
from helpers import random_bounded_scenario, rescaling_deviation
from nlgsim import (
    DisturbanceSpec,
    LyapunovParams,
    NlgExact,
    Pd,
    PlantState,
    Scenario,
    Sinusoid,
    Zero,
    analyze,
    control_amplitude_bound,
    epsilon_window,
    gain_lower_bound,
    lyapunov_decrease_bound,
    lyapunov_v,
    recommended_step,
    simulate,
)
from nlgsim.analysis import z_cap
from nlgsim.cli import CSV_HEADER, bundled_config, main, parse_scenario_file

SEED = 20261017


@pytest.fixture(scope="module")
def bounded_runs():
    """The 200 randomized scenarios shared by criteria 1 and 4, with wall time."""
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    runs = []
    for i in range(200):
        s = random_bounded_scenario(rng, i)
        runs.append((s, simulate(s)))
    return runs, time.perf_counter() - start


def test_criterion_1_no_overshoot(bounded_runs, acceptance):
    runs, elapsed = bounded_runs
    crossings = 0
    for s, tr in runs:
        signs = np.sign(tr.x1[np.abs(tr.x1) >= s.stop_tolerance])
        crossings += int(np.any(signs != signs[0]))
    kinds = {type(s.disturbance.kind).__name__ for s, _ in runs}
    ok = crossings == 0 and elapsed <= 120.0
    acceptance(1, ok, f"{crossings} of {len(runs)} scenarios change sign of x1; "
                      f"kinds={sorted(kinds)}; {elapsed:.1f}s")
    assert crossings == 0
    assert elapsed <= 120.0
    assert len(kinds) == 4  # Zero, Constant, Sinusoid, TableLookup


def _fig4():
    spec = parse_scenario_file(bundled_config("fig4.cfg").read_text())
    return {e.name: e.scenario for e in spec.entries}


@pytest.fixture(scope="module")
def fig4_runs():
    start = time.perf_counter()
    runs = {name: simulate(s) for name, s in _fig4().items()}
    return runs, time.perf_counter() - start


def test_criterion_2_convergence(fig4_runs, acceptance):
    runs, elapsed = fig4_runs
    parts, ok = [], elapsed <= 30.0
    for name, tr in runs.items():
        s = tr.scenario
        assert isinstance(s.disturbance.kind, Sinusoid)
        assert s.controller.gamma == 100.0 and s.controller.mu == 1e-9 and s.integrator.value == "euler"
        changes = analyze(tr).sign_changes_of_x1
        settled = tr.converged_index is not None and np.all(
            np.maximum(np.abs(tr.x1[tr.converged_index:]), np.abs(tr.x2[tr.converged_index:])) < 1e-3)
        ok = ok and settled and changes == 0
        parts.append(f"{name}: converged_at={tr.converged_at} sign_changes={changes}")
    acceptance(2, ok, "; ".join(parts) + f"; {elapsed:.1f}s")
    assert ok


def test_criterion_2_average_tracks_disturbance(fig4_runs, acceptance):
    tr = fig4_runs[0]["threshold"]
    k = tr.converged_index
    u, d = tr.u[k:], tr.d[k:]
    width = int(round(1.0 / 3000.0 / tr.scenario.dt))
    avg = np.convolve(u, np.ones(width) / width, mode="valid")
    ref = -d[width - 1:]
    rms = float(np.sqrt(np.mean((avg - ref) ** 2)) / np.sqrt(np.mean(ref ** 2)))
    acceptance(2, rms <= 0.10, f"threshold 3 kHz moving average vs -d: relative RMS {rms:.4f} (limit 0.10)")
    assert rms <= 0.10


def test_criterion_2_chatter_band(fig4_runs, acceptance):
    tr = fig4_runs[0]["threshold"]
    s = tr.scenario
    gamma = s.controller.gamma
    band = gamma + z_cap(s.initial, gamma, s.disturbance.bound_D)
    peak = float(np.max(np.abs(tr.u[tr.converged_index:])))
    acceptance(2, peak <= band, f"threshold post-convergence max|u|={peak:.1f}, band={band:.1f}")
    assert peak <= band


def test_criterion_3_lyapunov_certificate(acceptance):
    gamma, D = 405.0, 50.0
    s = Scenario(PlantState(-1.0, 0.5), NlgExact(gamma), DisturbanceSpec(Sinusoid(D, 20 * math.pi), D),
                 dt=1e-6, t_end=0.1)
    tr = simulate(s)
    lo, hi = epsilon_window(gamma, D)
    rep = analyze(tr, D, LyapunovParams(gamma, 0.5 * (lo + hi)))
    ok = rep.lyapunov_violations == 0 and rep.lyapunov_checked_steps == 100_000 and not rep.lyapunov_skipped
    acceptance(3, ok, f"{rep.lyapunov_checked_steps} steps checked, {rep.lyapunov_violations} violations, "
                      f"epsilon={rep.epsilon_used:.6f}")
    assert ok


def test_criterion_4_control_and_z_bounds(bounded_runs, acceptance):
    runs, _ = bounded_runs
    bad_u = bad_z = bad_steady = steady = 0
    resolution = 0.0
    for s, tr in runs:
        gamma, D = s.controller.gamma, s.disturbance.bound_D
        cap = z_cap(s.initial, gamma, D)
        u_bound = gamma + cap
        # a fixed step cannot place samples meaningfully closer to x1 = 0 than z_cap*dt^2
        floor = cap * s.dt ** 2
        resolution = max(resolution, floor)
        keep = np.abs(tr.x1) >= floor
        max_u = float(np.max(np.abs(tr.u[keep])))
        z = tr.z[keep]
        max_z = float(np.nanmax(z)) if np.isfinite(z).any() else 0.0
        bad_u += max_u > u_bound + 1e-6 * max(1.0, u_bound)
        bad_z += max_z > cap + 1e-6 * max(1.0, cap)
        if s.initial.x2 == 0.0:
            steady += 1
            b = 3 * gamma + 2 * D
            bad_steady += max_u > b + 1e-6 * max(1.0, b)
            assert control_amplitude_bound(s.initial, gamma, D) == pytest.approx(b)
    ok = bad_u == bad_z == bad_steady == 0
    acceptance(4, ok, f"u excess in {bad_u}, z excess in {bad_z}, 2D+3gamma excess in {bad_steady}/{steady} "
                      f"rest starts; samples with |x1| >= z_cap*dt^2 (<= {resolution:.1e})")
    assert ok
    assert steady > 0


def test_criterion_5_time_rescaling(acceptance):
    rng = np.random.default_rng(SEED + 5)
    worst, worst_ratio, n = 0.0, math.inf, 20
    fails = 0
    for i in range(n):
        D = float(rng.uniform(0.0, 50.0))
        gamma = gain_lower_bound(D) * float(rng.uniform(1.001, 2.0))
        r, th = 2.0 * math.sqrt(rng.uniform()), rng.uniform(0.0, 2.0 * math.pi)
        x0 = (r * math.cos(th), r * math.sin(th))
        d_value = 0.0 if i % 2 == 0 else 0.5 * D
        coarse = rescaling_deviation(gamma, D, x0, d_value, 1e-5).deviation
        fine = rescaling_deviation(gamma, D, x0, d_value, 5e-6).deviation
        ratio = coarse / fine
        worst, worst_ratio = max(worst, coarse), min(worst_ratio, ratio)
        fails += not (coarse < 1e-2 and ratio >= 1.8)
    acceptance(5, fails == 0, f"{n} scenarios: max deviation at dt=1e-5 {worst:.2e}, "
                              f"min halving ratio {worst_ratio:.2f}")
    assert fails == 0


def test_criterion_6_finite_time(acceptance):
    cases = [(405.0, (-1.0, 0.0)), (600.0, (0.5, 2.0)), (1000.0, (2.0, -1.0))]
    tol = 1e-3
    parts, ok = [], True
    for gamma, x0 in cases:
        init = PlantState(*x0)
        dt, _ = recommended_step(NlgExact(gamma), 50.0, init, tol)
        dist = DisturbanceSpec(Zero(), 50.0)
        base = Scenario(init, NlgExact(gamma), dist, dt=dt, t_end=2.0, stop_tolerance=tol)
        t1 = simulate(base).converged_at
        t2 = simulate(base.replace(dt=dt / 2)).converged_at
        rel = abs(t1 - t2) / t2
        pd = simulate(base.replace(controller=Pd(gamma, 2.0 * math.sqrt(gamma)), t_end=t1 + dt))
        k = int(np.searchsorted(pd.t, t1 - 1e-12))
        pd_norm = max(abs(pd.x1[k]), abs(pd.x2[k]))
        ok = ok and rel < 0.05 and pd_norm > tol
        parts.append(f"gamma={gamma:g}: T={t1:.5f} vs {t2:.5f} ({rel:.2%}), PD |x|={pd_norm:.3g}")
    acceptance(6, ok, "; ".join(parts))
    assert ok


def _rel_ok(a, b):
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=0.0) or a == b


def test_criterion_7_formula_oracles(acceptance):
    rng = np.random.default_rng(SEED + 7)
    n = 10_000
    misses = {"gain_lower_bound": 0, "epsilon_window": 0, "lyapunov_v": 0, "control_amplitude_bound": 0}
    for _ in range(n):
        D = float(rng.uniform(0.0, 50.0))
        misses["gain_lower_bound"] += not _rel_ok(gain_lower_bound(D), oracles.gain_lower_bound(D))

        gamma = gain_lower_bound(D) * float(rng.uniform(1.0001, 10.0))
        got, want = epsilon_window(gamma, D), oracles.epsilon_window(gamma, D)
        misses["epsilon_window"] += not (_rel_ok(got[0], want[0]) and _rel_ok(got[1], want[1]))

        x1, x2 = (float(v) for v in rng.uniform(-10.0, 10.0, size=2))
        eps = float(rng.uniform(0.0, 0.99)) * math.sqrt(2.0 * gamma) or 0.5
        got = lyapunov_v(PlantState(x1, x2), LyapunovParams(gamma, eps))
        misses["lyapunov_v"] += not _rel_ok(got, oracles.lyapunov_v(x1, x2, gamma, eps))

        if x1 != 0.0:
            got = control_amplitude_bound(PlantState(x1, x2), gamma, D)
            misses["control_amplitude_bound"] += not _rel_ok(got, oracles.control_amplitude_bound(x1, x2, gamma, D))

    young_fail = 0
    for _ in range(n):
        a, b = (float(v) for v in rng.uniform(0.0, 20.0, size=2))
        p = float(rng.choice([1.5, 3.0]))
        young_fail += not oracles.young_holds(a, b, p)
        young_fail += not a * b <= a ** p / p + (p - 1) / p * b ** (p / (p - 1)) * (1 + 1e-12)

    # the two applications of the inequality: the dV/dt bound dominates the exact
    # derivative along the closed loop for every admissible disturbance value
    dominated = 0
    for _ in range(n):
        D = float(rng.uniform(0.0, 50.0))
        gamma = gain_lower_bound(D) * float(rng.uniform(1.0001, 3.0))
        lo, hi = epsilon_window(gamma, D)
        eps = lo + (hi - lo) * float(rng.uniform(0.01, 0.99))
        x1 = float(rng.uniform(-5.0, 5.0)) or 1.0
        x2 = float(rng.uniform(-20.0, 20.0))
        d = float(rng.uniform(-D, D))
        a, s = abs(x1), math.copysign(1.0, x1)
        u = -(gamma * x1 + abs(x2) * x2) / a
        dv = (gamma * s + eps * x2 / (2 * math.sqrt(a))) * x2 + (eps * math.sqrt(a) * s + x2) * (u + d)
        bound = lyapunov_decrease_bound(PlantState(x1, x2), D, LyapunovParams(gamma, eps))
        scale = gamma * abs(x2) + abs(x2) ** 3 / a + gamma * math.sqrt(a) + 1.0
        dominated += dv > bound + 1e-12 * scale
        # the two terms of the bound can nearly cancel; compare against their size
        assert abs(bound - oracles.decrease_bound(x1, x2, gamma, D, eps)) <= 1e-12 * scale

    ok = not any(misses.values()) and young_fail == 0 and dominated == 0
    acceptance(7, ok, f"{n} inputs per formula, misses={misses}; Young failures {young_fail}/{2 * n}; "
                      f"dV bound exceeded {dominated}/{n}")
    assert ok


def test_criterion_8_determinism_and_schema(tmp_path, acceptance):
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["run", "fig4.cfg", "-o", str(o)]) for o in outs]
    names = sorted(p.name for p in outs[0].iterdir())
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
    headers = {n: (outs[0] / n).read_text().split("\n", 1)[0] for n in names if n.endswith("_trajectory.csv")}
    ok = codes == [0, 0] and not mismatch and not errors and len(headers) == 2 and all(
        h == CSV_HEADER == "t,x1,x2,u,d,V,zeta,z" for h in headers.values())
    acceptance(8, ok, f"exit codes {codes}; {len(match)} files identical, {len(mismatch)} differ; "
                      f"headers {sorted(set(headers.values()))}")
    assert ok
