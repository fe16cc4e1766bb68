"""Command-line front end: scenario files, batch runs and figure data."""

from __future__ import annotations

import argparse
import configparser
import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import LyapunovParams, analyze, gain_lower_bound
from .core import (
    NLG_KINDS,
    Constant,
    DisturbanceSpec,
    Integrator,
    NlgExact,
    NlgRegularized,
    NlgThreshold,
    NlgSimError,
    Pd,
    PlantState,
    Scenario,
    Sinusoid,
    TableLookup,
    Trajectory,
    Zero,
    validate_scenario,
)
from .dynamics import recommended_step, simulate

CSV_HEADER = "t,x1,x2,u,d,V,zeta,z"
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2

#: gains of the evaluated controllers, used verbatim on the normalized plant
BENCHMARK_GAINS = {"PD1": (500.0, 2.0), "PD2": (750.0, 4.0), "NLG": 25.0}


class ConfigParse(NlgSimError):
    """Scenario file could not be turned into scenarios."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


# scenario files

@dataclass
class ScenarioEntry:
    name: str
    scenario: Scenario
    D: float
    epsilon: Optional[float] = None
    stride: int = 1


@dataclass
class ScenarioFile:
    """Parsed scenario file: named scenarios plus analysis and output options."""

    entries: List[ScenarioEntry] = field(default_factory=list)


_SCENARIO_RE = re.compile(r"^scenario\s+(\S+)$")


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of every key, keyed by (section, key)."""
    out = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            out[(section, "")] = i
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = i
    return out


def _parse_table(text: str) -> Tuple[Tuple[float, float], ...]:
    pts = []
    for item in text.replace("\n", ",").split(","):
        item = item.strip()
        if item:
            t, d = item.split(":")
            pts.append((float(t), float(d)))
    return tuple(pts)


class _BadValue(ValueError):
    """A value that failed to convert, tagged with its key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class _Section:
    """Typed reads from a config section; conversion errors name the key."""

    def __init__(self, sec: configparser.SectionProxy):
        self.sec = sec

    def __contains__(self, key):
        return key in self.sec

    def __getitem__(self, key):
        return self.sec[key]

    def get(self, key, default=None):
        return self.sec.get(key, default)

    def _conv(self, key, fn):
        try:
            return fn(self.sec[key])
        except (ValueError, TypeError) as exc:
            raise _BadValue(key, str(exc)) from None

    def getfloat(self, key, default=None):
        return self._conv(key, float) if key in self.sec else default

    def getint(self, key, default=None):
        return self._conv(key, int) if key in self.sec else default

    def getboolean(self, key, default=None):
        if key not in self.sec:
            return default
        return self._conv(key, lambda v: self.sec.getboolean(key))


def _req(sec: "_Section", key: str) -> float:
    if key not in sec:
        raise KeyError(key)
    return sec.getfloat(key)


def _build_entry(name: str, raw: configparser.SectionProxy, analysis: Dict[str, str],
                 output: Dict[str, str]) -> ScenarioEntry:
    sec = _Section(raw)
    law = sec.get("controller", "nlg_threshold").strip().lower()
    gamma = _req(sec, "gamma")
    mu = sec.getfloat("mu", 1e-9)
    if law == "nlg_exact":
        ctrl = NlgExact(gamma)
    elif law == "nlg_threshold":
        ctrl = NlgThreshold(gamma, mu)
    elif law == "nlg_regularized":
        ctrl = NlgRegularized(gamma, mu)
    elif law == "pd":
        ctrl = Pd(gamma, sec.getfloat("sigma", 2.0 * math.sqrt(gamma)))
    else:
        raise ValueError(f"unknown controller {law!r}")

    D = _req(sec, "bound_d")
    kind = sec.get("disturbance", "zero").strip().lower()
    if kind == "zero":
        dk = Zero()
    elif kind == "constant":
        dk = Constant(_req(sec, "d_value"))
    elif kind == "sinusoid":
        if "d_frequency_hz" in sec:
            omega = 2.0 * math.pi * sec.getfloat("d_frequency_hz")
        else:
            omega = _req(sec, "d_angular_frequency")
        dk = Sinusoid(_req(sec, "d_amplitude"), omega, sec.getfloat("d_phase", 0.0))
    elif kind == "table":
        dk = TableLookup(sec._conv("d_table", _parse_table))
    else:
        raise ValueError(f"unknown disturbance {kind!r}")

    scenario = Scenario(
        initial=PlantState(_req(sec, "x1"), sec.getfloat("x2", 0.0)),
        controller=ctrl,
        disturbance=DisturbanceSpec(dk, D),
        dt=sec.getfloat("dt", 1e-5),
        t_end=sec.getfloat("t_end", 1.0),
        integrator=Integrator(sec.get("integrator", "euler").strip().lower()),
        stop_tolerance=sec.getfloat("stop_tolerance", 1e-3),
        stop_dwell_steps=sec.getint("stop_dwell_steps", 100),
        stop_on_convergence=sec.getboolean("stop_on_convergence", False),
    )
    D_an = float(sec.get("analysis_d", analysis.get("d", D)))
    eps = sec.get("epsilon", analysis.get("epsilon", "auto")).strip().lower()
    stride = int(sec.get("stride", output.get("stride", "1")))
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return ScenarioEntry(name, scenario, D_an, None if eps == "auto" else float(eps), stride)


def parse_scenario_file(text: str, overrides: Optional[Dict[str, object]] = None) -> ScenarioFile:
    """Parse an INI scenario file.

    Sections ``[scenario NAME]`` declare runs; ``[analysis]`` holds ``D`` and
    ``epsilon`` (``auto`` or a number); ``[output]`` holds ``stride``.
    Errors are reported with line numbers.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigParse([f"line {getattr(exc, 'lineno', '?')}: {exc.message.splitlines()[0]}"])
    lines = _key_lines(text)
    analysis = dict(cp["analysis"]) if cp.has_section("analysis") else {}
    output = dict(cp["output"]) if cp.has_section("output") else {}
    diags = []
    out = ScenarioFile()
    for section in cp.sections():
        m = _SCENARIO_RE.match(section)
        if not m:
            if section not in ("analysis", "output"):
                diags.append(f"line {lines.get((section, ''), '?')}: unknown section [{section}]")
            continue
        sec = cp[section]
        for key, value in (overrides or {}).items():
            if value is not None:
                sec[key] = str(value)
        try:
            entry = _build_entry(m.group(1), sec, analysis, output)
        except KeyError as exc:
            key = str(exc.args[0])
            diags.append(f"line {lines.get((section, ''), '?')}: [{section}] missing key {key!r}")
            continue
        except _BadValue as exc:
            diags.append(f"line {lines.get((section, exc.key), '?')}: [{section}] {exc}")
            continue
        except (ValueError, TypeError) as exc:
            where = _guess_line(str(exc), section, lines)
            diags.append(f"line {where}: [{section}] {exc}")
            continue
        for d in validate_scenario(entry.scenario):
            if d.is_error:
                diags.append(f"line {lines.get((section, ''), '?')}: [{section}] {d.code}: {d.message}")
        out.entries.append(entry)
    if not out.entries and not diags:
        diags.append("no scenarios")
    if diags:
        raise ConfigParse(diags)
    return out


def _guess_line(message: str, section: str, lines) -> object:
    for (sec, key), ln in lines.items():
        if sec == section and key and key in message.lower():
            return ln
    return lines.get((section, ""), "?")


# output formats

def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_trajectory_csv(traj: Trajectory, path: Path, stride: int = 1) -> None:
    table = traj.table()[::stride]
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in table:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_columns(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# verbs

def run(config_path, out_dir, overrides: Optional[Dict[str, object]] = None,
        log=print) -> int:
    """Simulate, analyze and write every scenario in ``config_path``."""
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        log(f"error: cannot read {config_path}: {exc}")
        return EXIT_CONFIG
    try:
        spec = parse_scenario_file(text, overrides)
    except ConfigParse as exc:
        for d in exc.diagnostics:
            log(f"{config_path}: {d}")
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    summary = []
    for entry in spec.entries:
        try:
            traj = simulate(entry.scenario)
        except NlgSimError as exc:
            log(f"{entry.name}: simulation failed: {exc}")
            summary.append(f"{entry.name}=failed")
            status = EXIT_CHECK
            continue
        write_trajectory_csv(traj, out / f"{entry.name}_trajectory.csv", entry.stride)
        if isinstance(entry.scenario.controller, NLG_KINDS):
            p = "auto" if entry.epsilon is None else LyapunovParams(entry.scenario.gamma, entry.epsilon)
            report = analyze(traj, entry.D, p)
            (out / f"{entry.name}_report.txt").write_text(report.to_text())
            ok = report.passed
        else:
            ok = True
        summary.append(f"{entry.name}={'pass' if ok else 'fail'}")
        if not ok:
            status = EXIT_CHECK
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    for line in summary:
        log(line)
    return status


def emit_phase_portrait(gamma: float, starts: Sequence[Tuple[float, float]], out_path,
                        dt: Optional[float] = None, t_end: float = 2.0,
                        tolerance: float = 1e-3) -> List[Path]:
    """One CSV (t,x1,x2,u) per start, all with the same step, d = 0.

    Runs use the exact law, RK4, and stop once the state settles in the
    tolerance band.
    """
    states = [PlantState(a, b) for a, b in starts]
    for st in states:
        if not st.in_domain():
            raise ValueError(f"start {st.as_tuple()} lies outside the admissible domain")
    ctrl = NlgExact(gamma)
    dist = DisturbanceSpec(Zero(), 1.0)
    if dt is None:
        dt = min(recommended_step(ctrl, 0.0, st, tolerance)[0] for st in states)
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, st in enumerate(states):
        s = Scenario(st, ctrl, dist, dt=dt, t_end=t_end, integrator=Integrator.RK4,
                     stop_tolerance=tolerance, stop_dwell_steps=1, stop_on_convergence=True)
        traj = simulate(s)
        path = out / f"phase_{i:02d}.csv"
        _write_columns(path, ("t", "x1", "x2", "u"), (traj.t, traj.x1, traj.x2, traj.u))
        files.append(path)
    return files


def emit_gain_bound_curve(D_max: float, n_points: int, out_path) -> Path:
    if not D_max > 0 or n_points < 2:
        raise ValueError("need D_max > 0 and n_points >= 2")
    D = np.linspace(0.0, D_max, n_points)
    g = np.array([gain_lower_bound(float(x)) for x in D])
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_columns(path, ("D", "gamma_min"), (D, g))
    return path


def emit_comparison(out_dir, gamma: float = 100.0, dt: float = 1e-5, t_end: float = 1.0,
                    benchmark: bool = False) -> List[Path]:
    """Exact law versus a critically damped PD loop from (-1, 0) with d = 0.

    Writes |x2| and u for both.  With ``benchmark`` the gain sets of the
    hardware comparison are also run on the normalized plant; that output is
    a qualitative analogue only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x0 = PlantState(-1.0, 0.0)
    dist = DisturbanceSpec(Zero(), 1.0)

    def go(ctrl):
        return simulate(Scenario(x0, ctrl, dist, dt=dt, t_end=t_end, stop_dwell_steps=1))

    nlg = go(NlgExact(gamma))
    pd = go(Pd(gamma, 2.0 * math.sqrt(gamma)))
    files = [out / "compare_x2.csv", out / "compare_u.csv"]
    _write_columns(files[0], ("t", "nlg_abs_x2", "pd_abs_x2"), (nlg.t, np.abs(nlg.x2), np.abs(pd.x2)))
    _write_columns(files[1], ("t", "nlg_u", "pd_u"), (nlg.t, nlg.u, pd.u))
    if benchmark:
        runs = [go(NlgExact(BENCHMARK_GAINS["NLG"]))]
        runs += [go(Pd(*BENCHMARK_GAINS[k])) for k in ("PD1", "PD2")]
        path = out / "compare_benchmark_qualitative.csv"
        _write_columns(path, ("t", "nlg_x1", "pd1_x1", "pd2_x1"), [nlg.t] + [r.x1 for r in runs])
        files.append(path)
    return files


# argument parsing

def _parse_start(text: str) -> Tuple[float, float]:
    a, b = text.split(",")
    return float(a), float(b)


DEFAULT_STARTS = [(a, b) for a in (0.25, 0.5, 0.75, 1.0) for b in (-50.0, 50.0)]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlgsim", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="simulate and check the scenarios of a config file")
    r.add_argument("config", help="scenario file, or the name of a bundled one (fig4.cfg, mirror.cfg)")
    r.add_argument("-o", "--out", required=True, help="output directory")
    r.add_argument("--dt", type=float)
    r.add_argument("--t-end", type=float)
    r.add_argument("--tolerance", type=float)
    r.add_argument("--stop-on-convergence", action="store_true")

    pp = sub.add_parser("phase-portrait", help="closed-loop trajectories from a grid of starts")
    pp.add_argument("-o", "--out", required=True)
    pp.add_argument("--gamma", type=float, default=100.0)
    pp.add_argument("--start", type=_parse_start, action="append",
                    help="initial state as x1,x2 (repeatable)")
    pp.add_argument("--dt", type=float)
    pp.add_argument("--t-end", type=float, default=2.0)
    pp.add_argument("--tolerance", type=float, default=1e-3)

    g = sub.add_parser("gain-curve", help="minimal gain as a function of the disturbance bound")
    g.add_argument("-o", "--out", required=True, help="output CSV path")
    g.add_argument("--d-max", type=float, default=10.0)
    g.add_argument("--points", type=int, default=101)

    c = sub.add_parser("compare", help="exact law versus critically damped PD")
    c.add_argument("-o", "--out", required=True)
    c.add_argument("--gamma", type=float, default=100.0)
    c.add_argument("--dt", type=float, default=1e-5)
    c.add_argument("--t-end", type=float, default=1.0)
    c.add_argument("--benchmark-gains", action="store_true",
                   help="also run the hardware-comparison gains on the normalized plant")
    return ap


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("nlgsim") / "configs" / name))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            cfg = Path(args.config)
            if not cfg.exists() and bundled_config(args.config).exists():
                cfg = bundled_config(args.config)
            overrides = {"dt": args.dt, "t_end": args.t_end, "stop_tolerance": args.tolerance,
                         "stop_on_convergence": "true" if args.stop_on_convergence else None}
            return run(cfg, args.out, overrides)
        if args.verb == "phase-portrait":
            files = emit_phase_portrait(args.gamma, args.start or DEFAULT_STARTS, args.out,
                                        args.dt, args.t_end, args.tolerance)
        elif args.verb == "gain-curve":
            files = [emit_gain_bound_curve(args.d_max, args.points, args.out)]
        else:
            files = emit_comparison(args.out, args.gamma, args.dt, args.t_end, args.benchmark_gains)
    except (ValueError, NlgSimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
