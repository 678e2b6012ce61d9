"""Scenario presets, experiment configuration, sweeps, and flat-file artifacts.

Config files are plain key = value text with [section] headers and
comma-separated lists; every run writes a timeseries CSV with a fixed
column schema, a structured report with one block per monitor, and a
provenance block (grid, dt history, code version, hash of the canonical
spec text) so each run is reproducible from its artifact alone.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre

from . import __version__
from .flow import FlowConfig, StepReject, Trajectory, check_kahler_class, run
from .geometry import (ConformalMetric, Grid, conformal_metric, curvature_bounds,
                       diameter, make_grid, normalize_volume, round_metric,
                       volume, weighted_integral, gaussian_curvature)
from .monitors import (ALL_CHECKS, FAIL, CheckReport, TrajectoryReport,
                       evaluate_trajectory)
from .potential import VolumeMismatch, NormalizationFail
from .spectral import (BandAmbiguity, SolveFail, lambda_second,
                       weighted_spectrum)


class ConfigError(Exception):
    """Malformed experiment spec; carries the offending line or key."""


SCENARIOS = ("round", "legendre_bump", "multi_mode", "custom_w")
SWEEP_TARGETS = ("amplitude", "calabi")

TIMESERIES_COLUMNS = (
    "t", "dt", "volume", "diam", "K_min", "K_max", "a", "Y", "Z", "osc_u",
    "c0_u_minus_a", "grad_u_c0", "lambda_g", "holo_band_min",
    "holo_band_max", "class_residual", "phi_c0")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str = "round"
    scenario_params: tuple = ()
    grid_n: int = 256
    flow: FlowConfig = field(default_factory=FlowConfig)
    checks: tuple = ALL_CHECKS
    monitor_params: tuple = ()
    sweep: tuple = ()
    sweep_target: str = "amplitude"
    output_dir: str = "out"

    def scenario_dict(self):
        return dict(self.scenario_params)

    def monitor_dict(self):
        return dict(self.monitor_params)


@dataclass
class RunArtifacts:
    output_dir: Path
    timeseries_path: Path | None
    report_path: Path
    exit_code: int
    trajectory: Trajectory | None = None
    report: TrajectoryReport | None = None
    error: str | None = None
    rows: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def legendre_profile(grid: Grid, l: int, amplitude: float) -> np.ndarray:
    c = np.zeros(l + 1)
    c[l] = 1.0
    return amplitude * legendre.legval(grid.cos_nodes, c)


def legendre_bump(grid: Grid, l: int, eps: float) -> ConformalMetric:
    """w = eps P_l(cos theta), shifted to exact volume 4 pi; needs l >= 2
    (degree-one bumps are first-order trivial reparametrizations)."""
    if l < 2:
        raise ConfigError(f"legendre_bump needs l >= 2, got l = {l}")
    metric = conformal_metric(grid, legendre_profile(grid, l, eps))
    return normalize_volume(metric)


def multi_mode(grid: Grid, seed: int, decay_rate: float,
               amplitude: float) -> ConformalMetric:
    """Deterministic multi-harmonic profile sum_{l=2..6} a_l P_l(cos theta)
    with a_l = amplitude * r_l * l^-decay_rate, r_l uniform from the seed."""
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1.0, 1.0, size=5)
    w = np.zeros(grid.n_nodes)
    for i, l in enumerate(range(2, 7)):
        w += legendre_profile(grid, l, amplitude * r[i] * l ** (-decay_rate))
    return normalize_volume(conformal_metric(grid, w))


def custom_w(grid: Grid, path: str) -> ConformalMetric:
    """Nodal conformal factor from a text file, one value per line.

    No volume rescaling: the run precondition is the caller's problem,
    which is exactly what the volume-violation error path exercises.
    """
    try:
        vals = np.loadtxt(path, dtype=float, ndmin=1)
    except OSError as exc:
        raise ConfigError(f"cannot read custom_w file {path!r}: {exc}")
    if vals.shape != (grid.n_nodes,):
        raise ConfigError(
            f"custom_w file {path!r} holds {vals.shape[0]} values, "
            f"grid needs {grid.n_nodes}")
    return conformal_metric(grid, vals)


def measured_calabi(metric: ConformalMetric) -> float:
    """(1/V) integral (K - 1)^2 dv, the scalar-curvature energy datum."""
    k = gaussian_curvature(metric).values
    return weighted_integral((k - 1.0) ** 2, metric) / volume(metric)


def legendre_bump_for_calabi(grid: Grid, l: int,
                             eps_calabi: float) -> ConformalMetric:
    """Bump whose measured curvature energy equals eps_calabi exactly.

    The amplitude solves measured_calabi(w) = target by a multiplicative
    secant from the linearized seed; the oblate orientation (negative
    amplitude) is used, see the scaling-sweep notes in the README.
    """
    lin = (l * (l + 1) - 2.0) ** 2 / (2.0 * l + 1.0)
    amp = -math.sqrt(eps_calabi / lin)
    for _ in range(40):
        got = measured_calabi(legendre_bump(grid, l, amp))
        factor = math.sqrt(eps_calabi / got)
        amp *= factor
        if abs(factor - 1.0) < 1e-13:
            break
    return legendre_bump(grid, l, amp)


def initial_metric(spec: ExperimentSpec, grid: Grid | None = None
                   ) -> ConformalMetric:
    grid = grid or make_grid(spec.grid_n)
    params = spec.scenario_dict()
    if spec.scenario == "round":
        return round_metric(grid)
    if spec.scenario == "legendre_bump":
        return legendre_bump(grid, int(params.get("l", 2)),
                             float(params.get("eps", 1e-3)))
    if spec.scenario == "multi_mode":
        return multi_mode(grid, int(params.get("seed", 7)),
                          float(params.get("decay_rate", 2.0)),
                          float(params.get("amplitude", 5e-3)))
    if spec.scenario == "custom_w":
        if "file" not in params:
            raise ConfigError("custom_w scenario needs file = <path>")
        return custom_w(grid, str(params["file"]))
    raise ConfigError(f"unknown scenario {spec.scenario!r}")


# ---------------------------------------------------------------------------
# config text round-trip
# ---------------------------------------------------------------------------

_FLOW_KEYS = {
    "t_end": float, "dt_init": float, "scheme": str, "vol_tol": float,
    "class_tol": float, "potential_tol": float, "record_dt": float,
    "m_max": int, "k_per_mode": int, "band_tol": float, "track_phi": bool,
    "early_stop": float, "max_halvings": int,
}
_SCENARIO_KEYS = {"l": int, "eps": float, "seed": int, "decay_rate": float,
                  "amplitude": float, "file": str}
_MONITOR_KEYS = {"rho": float, "curvature_bound": float, "phi0": float,
                 "delta": float, "D": float, "L": float,
                 "epsilon": float, "t0": float,
                 "delta_measured": float, "branch_mode": int,
                 "branch_index": int, "class_tol": float,
                 "log_det_tol": float}


def _parse_scalar(raw: str, typ, key: str, lineno: int):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is float and raw.lower() in ("auto", "none"):
            return None
        return typ(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for key {key!r}")


def _parse_sweep_values(raw: str, lineno: int) -> tuple:
    raw = raw.strip()
    if ".." in raw:
        try:
            lo_hi, _, npts = raw.partition(":")
            lo, hi = lo_hi.split("..")
            n = int(npts) if npts else 9
            return tuple(float(v) for v in
                         np.geomspace(float(lo), float(hi), n))
        except ValueError:
            raise ConfigError(f"line {lineno}: bad sweep range {raw!r}")
    try:
        return tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"line {lineno}: bad sweep list {raw!r}")


def loads(text: str) -> ExperimentSpec:
    """Parse the key = value spec format; first violation raises ConfigError."""
    section = ""
    top: dict = {}
    scenario: dict = {}
    flow: dict = {}
    monitors: dict = {}
    checks = None
    sweep_vals: tuple = ()
    sweep_target = "amplitude"
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in ("scenario", "flow", "monitors", "sweep"):
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if section == "":
            if key == "scenario":
                if raw not in SCENARIOS:
                    raise ConfigError(f"line {lineno}: unknown scenario {raw!r}")
                top["scenario"] = raw
            elif key == "grid_n":
                top["grid_n"] = _parse_scalar(raw, int, key, lineno)
            elif key == "output_dir":
                top["output_dir"] = raw
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        elif section == "scenario":
            if key not in _SCENARIO_KEYS:
                raise ConfigError(f"line {lineno}: unknown scenario key {key!r}")
            scenario[key] = _parse_scalar(raw, _SCENARIO_KEYS[key], key, lineno)
        elif section == "flow":
            if key not in _FLOW_KEYS:
                raise ConfigError(f"line {lineno}: unknown flow key {key!r}")
            flow[key] = _parse_scalar(raw, _FLOW_KEYS[key], key, lineno)
        elif section == "monitors":
            if key == "checks":
                names = tuple(s.strip() for s in raw.split(",") if s.strip())
                for name in names:
                    if name not in ALL_CHECKS:
                        raise ConfigError(
                            f"line {lineno}: unknown check id {name!r}")
                checks = names
            elif key in _MONITOR_KEYS:
                monitors[key] = _parse_scalar(raw, _MONITOR_KEYS[key], key, lineno)
            else:
                raise ConfigError(f"line {lineno}: unknown monitor key {key!r}")
        elif section == "sweep":
            if key == "eps":
                sweep_vals = _parse_sweep_values(raw, lineno)
            elif key == "target":
                if raw not in SWEEP_TARGETS:
                    raise ConfigError(f"line {lineno}: unknown sweep target {raw!r}")
                sweep_target = raw
            else:
                raise ConfigError(f"line {lineno}: unknown sweep key {key!r}")
    spec = ExperimentSpec(
        scenario=top.get("scenario", "round"),
        scenario_params=tuple(sorted(scenario.items())),
        grid_n=top.get("grid_n", 256),
        flow=FlowConfig(**flow),
        checks=checks if checks is not None else ALL_CHECKS,
        monitor_params=tuple(sorted(monitors.items())),
        sweep=sweep_vals,
        sweep_target=sweep_target,
        output_dir=top.get("output_dir", "out"))
    if spec.scenario == "legendre_bump" and int(
            spec.scenario_dict().get("l", 2)) < 2:
        raise ConfigError("legendre_bump needs l >= 2")
    return spec


def load_spec(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read spec file {path!r}: {exc}")
    return loads(text)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(spec: ExperimentSpec) -> str:
    """Canonical text with every default echoed; loads(dumps(s)) == s."""
    lines = [f"scenario = {spec.scenario}",
             f"grid_n = {spec.grid_n}",
             f"output_dir = {spec.output_dir}"]
    if spec.scenario_params:
        lines.append("")
        lines.append("[scenario]")
        for k, v in spec.scenario_params:
            lines.append(f"{k} = {_fmt(v)}")
    lines.append("")
    lines.append("[flow]")
    fc = spec.flow
    for k in sorted(_FLOW_KEYS):
        v = getattr(fc, k)
        if v is None:
            v = "auto"
        lines.append(f"{k} = {_fmt(v)}")
    lines.append("")
    lines.append("[monitors]")
    lines.append("checks = " + ", ".join(spec.checks))
    for k, v in spec.monitor_params:
        lines.append(f"{k} = {_fmt(v)}")
    if spec.sweep:
        lines.append("")
        lines.append("[sweep]")
        lines.append("eps = " + ", ".join(repr(v) for v in spec.sweep))
        lines.append(f"target = {spec.sweep_target}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _timeseries_rows(traj: Trajectory):
    rows = []
    for s in traj.states:
        kmin, kmax = curvature_bounds(s.metric)
        band = s.holo_band or [math.nan]
        rows.append((
            s.t, s.dt, volume(s.metric), diameter(s.metric), kmin, kmax,
            s.funcs.a, s.funcs.Y, s.funcs.Z, s.funcs.osc_u,
            s.funcs.c0_u_minus_a, s.funcs.grad_u_c0,
            s.lambda_g if s.lambda_g is not None else math.nan,
            min(band), max(band),
            check_kahler_class(s) if s.initial is not None else math.nan,
            float(np.max(np.abs(s.phi.values)))))
    return rows


def write_timeseries(path: Path, traj: Trajectory) -> None:
    with open(path, "w") as f:
        f.write(",".join(TIMESERIES_COLUMNS) + "\n")
        for row in _timeseries_rows(traj):
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def _report_block(check: CheckReport) -> str:
    lines = [f"[check {check.check_id}]",
             f"statement = {check.statement}",
             f"verdict = {check.verdict}",
             f"gate_satisfied = {_fmt(check.gate_satisfied)}",
             f"margin = {_fmt(check.margin) if check.margin is not None else 'none'}",
             f"tolerance = {_fmt(check.tolerance)}"]
    for k in sorted(check.aux):
        lines.append(f"aux.{k} = {_fmt(check.aux[k])}")
    return "\n".join(lines)


def aggregate_exit_code(report: TrajectoryReport | None,
                        error: str | None) -> int:
    if error is not None:
        return EXIT_NUMERICAL
    if report is None:
        return EXIT_NUMERICAL
    if any(c.verdict == FAIL for c in report.checks):
        return EXIT_FAIL
    return EXIT_OK


def write_report(path: Path, spec: ExperimentSpec,
                 traj: Trajectory | None, report: TrajectoryReport | None,
                 error: str | None = None) -> int:
    spec_text = dumps(spec)
    code = aggregate_exit_code(report, error)
    blocks = ["[provenance]",
              f"code_version = {__version__}",
              f"spec_sha256 = {hashlib.sha256(spec_text.encode()).hexdigest()}",
              f"grid_n = {spec.grid_n}",
              f"h = {repr(math.pi / spec.grid_n)}",
              f"exit_code = {code}"]
    if traj is not None:
        dts = sorted({repr(s.dt) for s in traj.states if s.dt > 0})
        blocks.append("dt_history = " + (", ".join(dts) if dts else "none"))
        blocks.append(f"n_states = {len(traj.states)}")
        blocks.append(f"converged_at = "
                      f"{_fmt(traj.converged_at) if traj.converged_at is not None else 'none'}")
        for ev in traj.events:
            blocks.append("event = " + ", ".join(str(x) for x in ev))
    if error is not None:
        blocks.append(f"error = {error}")
    text = "\n".join(blocks) + "\n"
    if report is not None:
        for check in report.checks:
            text += "\n" + _report_block(check) + "\n"
        if report.rates:
            text += "\n[rates]\n"
            for k in sorted(report.rates):
                text += f"{k} = {_fmt(report.rates[k])}\n"
    text += "\n[spec]\n"
    text += "".join("| " + line + "\n" for line in spec_text.splitlines())
    path.write_text(text)
    return code


def run_scenario(spec: ExperimentSpec, base_dir=None) -> RunArtifacts:
    """Execute one scenario end to end and write its artifacts.

    Numerical failures (volume mismatch, eigensolver trouble, band
    ambiguity, step rejection cascades) land in the report with a nonzero
    exit code instead of propagating.
    """
    out = Path(base_dir) if base_dir is not None else Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.txt"
    ts_path = out / "timeseries.csv"
    try:
        metric = initial_metric(spec)
        traj = run(spec.flow, metric)
        params = spec.monitor_dict()
        report = evaluate_trajectory(traj, spec.checks, params)
    except (VolumeMismatch, NormalizationFail, SolveFail, BandAmbiguity,
            StepReject) as exc:
        error = f"{type(exc).__name__}: {exc}"
        code = write_report(report_path, spec, None, None, error=error)
        return RunArtifacts(output_dir=out, timeseries_path=None,
                            report_path=report_path, exit_code=code,
                            error=error)
    write_timeseries(ts_path, traj)
    code = write_report(report_path, spec, traj, report)
    return RunArtifacts(output_dir=out, timeseries_path=ts_path,
                        report_path=report_path, exit_code=code,
                        trajectory=traj, report=report)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _sweep_point_spec(spec: ExperimentSpec, value: float) -> ExperimentSpec:
    params = spec.scenario_dict()
    if spec.scenario != "legendre_bump":
        raise ConfigError("sweeps are defined for the legendre_bump scenario")
    params["eps"] = value
    return replace(spec, scenario_params=tuple(sorted(params.items())),
                   sweep=())


def _run_sweep_point(args):
    spec, value, target, out_dir = args
    point = _sweep_point_spec(spec, value)
    grid = make_grid(point.grid_n)
    l = int(point.scenario_dict().get("l", 2))
    try:
        if target == "calabi":
            metric = legendre_bump_for_calabi(grid, l, value)
        else:
            metric = legendre_bump(grid, l, float(value))
        eps_cal = measured_calabi(metric)
        traj = run(point.flow, metric)
        report = evaluate_trajectory(traj, point.checks, point.monitor_dict())
        write_timeseries(Path(out_dir) / "timeseries.csv", traj)
        code = write_report(Path(out_dir) / "report.txt", point, traj, report)
        t0 = float(point.monitor_dict().get("t0", 0.1))
        short = next((c for c in report.checks if c.check_id == "short_time"),
                     None)
        grad_t0 = short.aux["grad_c0_at_t0"] if short else math.nan
        row = {"eps": value, "eps_calabi": eps_cal, "grad_c0_at_t0": grad_t0,
               "ratio": grad_t0 / eps_cal ** 0.25 if eps_cal > 0 else math.nan,
               "K_eff": report.constants.get("K_eff_max", math.nan),
               "exit_code": code, "error": ""}
    except (VolumeMismatch, NormalizationFail, SolveFail, BandAmbiguity,
            StepReject, ConfigError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        write_report(Path(out_dir) / "report.txt", point, None, None,
                     error=error)
        row = {"eps": value, "eps_calabi": math.nan,
               "grad_c0_at_t0": math.nan, "ratio": math.nan,
               "K_eff": math.nan, "exit_code": EXIT_NUMERICAL, "error": error}
    return row


def sweep_epsilon(spec: ExperimentSpec, base_dir=None) -> RunArtifacts:
    """One run per sweep value with failures isolated, plus the aggregate
    regression of log |grad u|(t0) against log eps_Calabi."""
    if not spec.sweep:
        raise ConfigError("sweep requested but [sweep] eps is empty")
    out = Path(base_dir) if base_dir is not None else Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, value in enumerate(spec.sweep):
        sub = out / f"point_{i:02d}"
        sub.mkdir(parents=True, exist_ok=True)
        jobs.append((spec, float(value), spec.sweep_target, str(sub)))
    workers = int(os.environ.get("KRFLOW_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_sweep_point, jobs))
    else:
        rows = [_run_sweep_point(j) for j in jobs]
    summary = out / "sweep_summary.csv"
    cols = ("eps", "eps_calabi", "grad_c0_at_t0", "ratio", "K_eff",
            "exit_code")
    with open(summary, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(repr(float(row[c])) if c != "exit_code"
                             else str(row[c]) for c in cols) + "\n")
    good = [r for r in rows if r["exit_code"] == EXIT_OK
            and np.isfinite(r["ratio"])]
    report_lines = ["[sweep]", f"points = {len(rows)}",
                    f"failures = {len(rows) - len(good)}"]
    if len(good) >= 2:
        x = np.log([r["eps_calabi"] for r in good])
        y = np.log([r["grad_c0_at_t0"] for r in good])
        slope, intercept = np.polyfit(x, y, 1)
        ratios = np.array([r["ratio"] for r in good])
        report_lines += [f"slope = {repr(float(slope))}",
                         f"intercept = {repr(float(intercept))}",
                         f"ratio_max_over_min = "
                         f"{repr(float(ratios.max() / ratios.min()))}"]
    report_path = out / "sweep_report.txt"
    report_path.write_text("\n".join(report_lines) + "\n")
    code = EXIT_OK if all(r["exit_code"] == EXIT_OK for r in rows) else (
        max(r["exit_code"] for r in rows))
    return RunArtifacts(output_dir=out, timeseries_path=summary,
                        report_path=report_path, exit_code=code, rows=rows)


# ---------------------------------------------------------------------------
# single-state inspection used by the CLI
# ---------------------------------------------------------------------------

def state_at(spec: ExperimentSpec, t: float):
    """Flow the scenario to time t and return the recorded state nearest t."""
    metric = initial_metric(spec)
    cfg = replace(spec.flow, t_end=max(t, 0.0))
    if t <= 0.0:
        from .flow import initial_state
        return initial_state(metric, cfg)
    traj = run(cfg, metric)
    ts = traj.times()
    return traj.states[int(np.argmin(np.abs(ts - t)))]


def spectrum_dump(spec: ExperimentSpec, t: float) -> str:
    state = state_at(spec, t)
    sp = weighted_spectrum(state.metric, state.u, m_max=spec.flow.m_max,
                           k_per_mode=spec.flow.k_per_mode)
    lam_g, band = lambda_second(sp, spec.flow.band_tol)
    lines = ["index,eigenvalue,mode"]
    for i, en in enumerate(sp.entries):
        lines.append(f"{i},{repr(en.eigenvalue)},{en.m}")
    lines.append(f"# lambda_g = {repr(lam_g)}")
    lines.append("# holo_band = " + ", ".join(repr(b) for b in band))
    return "\n".join(lines) + "\n"
