"""Normalized conformal Ricci flow integrator with co-evolved potential.

The evolved variable is the conformal factor w, which obeys the scalar
parabolic equation dw/dt = (1/2)(1 - K); the relative potential phi is
co-integrated with the same scheme from dphi/dt = u - a and exists purely
to cross-check the integrator through the class identity

    e^{2 w(t)} = e^{2 w(0)} + (1/2) lap_round phi(t),

an exact consequence of the flow staying in a fixed cohomology class.
The Ricci potential is re-solved from scratch at every stage (the
quadrature solve is cheap and re-solving removes normalization drift).

Volume is a structural invariant: dV/dt = V - 4 pi holds exactly at the
semi-discrete level, so a state that starts at V = 4 pi stays there to
integrator rounding; the per-step volume check is the step-rejection
criterion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import spectral
from ._kernels import advance_rk4
from .geometry import (ConformalMetric, ScalarField, ROUND_VOLUME,
                       gaussian_curvature, laplace_round, volume,
                       weighted_integral)
from .potential import (FunctionalBundle, RicciPotential, VolumeMismatch,
                        functional_bundle, solve_ricci_potential)


class StepReject(Exception):
    """A step left the normalized class beyond tolerance; halve dt."""


SCHEMES = ("rk4", "semi_implicit")


@dataclass(frozen=True)
class FlowConfig:
    """Integrator controls.

    dt_init None means the explicit stability default
    0.25 h^2 min(e^{2w}); an explicit dt_init above that bound is
    rejected for the rk4 scheme.  resolve_u_every_step is part of the
    contract and fixed true.
    """

    t_end: float = 5.0
    dt_init: float | None = None
    scheme: str = "rk4"
    vol_tol: float = 1e-8
    class_tol: float = 1e-6
    potential_tol: float = 1e-9
    resolve_u_every_step: bool = True
    record_dt: float = 0.01
    m_max: int = 2
    k_per_mode: int = 5
    band_tol: float | None = None
    track_phi: bool = True
    early_stop: float = 1e-12
    max_halvings: int = 12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.resolve_u_every_step:
            raise ValueError("resolve_u_every_step is fixed true")


@dataclass(frozen=True)
class FlowState:
    """One time slice with all derived diagnostics."""

    t: float
    dt: float
    metric: ConformalMetric
    u: RicciPotential
    funcs: FunctionalBundle
    phi: ScalarField
    lambda_g: float | None
    holo_band: list[float] | None
    initial: ConformalMetric | None = None


@dataclass
class Trajectory:
    """Time-ordered flow states plus integrator events."""

    states: list[FlowState]
    events: list[tuple] = field(default_factory=list)
    converged_at: float | None = None

    def times(self):
        return np.array([s.t for s in self.states])

    def series(self, fn):
        return np.array([fn(s) for s in self.states])


def stability_dt(metric: ConformalMetric) -> float:
    """Explicit-scheme bound 0.25 h^2 min(e^{2w})."""
    return float(0.25 * metric.grid.h ** 2 * np.exp(2.0 * metric.w.min()))


def conformal_velocity(metric: ConformalMetric) -> np.ndarray:
    """dw/dt = (1/2)(1 - K) of the normalized flow."""
    return 0.5 * (1.0 - gaussian_curvature(metric).values)


def make_state(w: np.ndarray, phi: np.ndarray, t: float, dt: float,
               config: FlowConfig, initial: ConformalMetric | None,
               with_spectrum: bool = True) -> FlowState:
    grid = initial.grid if initial is not None else None
    if grid is None:
        raise ValueError("make_state needs the initial metric for its grid")
    metric = ConformalMetric(grid=grid, w=w.copy())
    u = solve_ricci_potential(metric, tol=config.potential_tol)
    lam_g = None
    band = None
    if with_spectrum:
        spec = spectral.weighted_spectrum(metric, u, m_max=config.m_max,
                                          k_per_mode=config.k_per_mode)
        lam_g, band = spectral.lambda_second(spec, config.band_tol)
    funcs = functional_bundle(u, metric, lambda_g=lam_g)
    state = FlowState(t=t, dt=dt, metric=metric, u=u, funcs=funcs,
                      phi=ScalarField(grid=grid, values=phi.copy()),
                      lambda_g=lam_g, holo_band=band, initial=initial)
    if initial is not None and config.track_phi:
        res = check_kahler_class(state)
        if res > config.class_tol:
            raise StepReject(
                f"class identity residual {res:.3e} over {config.class_tol:.0e}"
                f" at t = {t:.6g}")
    return state


def initial_state(metric: ConformalMetric, config: FlowConfig,
                  with_spectrum: bool = True) -> FlowState:
    vol = volume(metric)
    if abs(vol - ROUND_VOLUME) > config.vol_tol * ROUND_VOLUME:
        raise VolumeMismatch(
            f"initial volume {vol:.12g} off 4*pi by {vol - ROUND_VOLUME:.3e};"
            " rescale before flowing")
    return make_state(metric.w, np.zeros(metric.grid.n_nodes), 0.0, 0.0,
                      config, initial=metric, with_spectrum=with_spectrum)


def step(state: FlowState, dt: float, config: FlowConfig | None = None,
         with_spectrum: bool = False) -> FlowState:
    """One explicit RK4 step; raises StepReject on the volume check."""
    config = config or FlowConfig()
    bound = stability_dt(state.metric)
    if dt > bound * (1.0 + 1e-12):
        raise ValueError(f"dt = {dt:.3e} over the stability bound {bound:.3e}")
    w = state.metric.w.copy()
    phi = state.phi.values.copy()
    _, ok = advance_rk4(w, phi, 1, dt, state.metric.grid,
                        config.vol_tol * ROUND_VOLUME)
    if not ok:
        raise StepReject(f"volume drifted beyond tolerance at t = {state.t:.6g}")
    initial = state.initial if state.initial is not None else state.metric
    return make_state(w, phi, state.t + dt, dt, config, initial,
                      with_spectrum=with_spectrum)


def _advance_semi_implicit(w, phi, nsteps, dt, grid, vol_limit, config):
    """Backward Euler on the linearized diffusion; first order in time."""
    from .potential import solve_u_values

    n = grid.n_nodes
    h = grid.h
    sfi = grid.sin_flux[1:-1]
    sn = grid.sin_nodes
    lower = np.concatenate(([0.0], sfi)) / (h * h * sn)
    upper = np.concatenate((sfi, [0.0])) / (h * h * sn)
    center = -(np.concatenate(([0.0], sfi)) + np.concatenate((sfi, [0.0]))) / (h * h * sn)
    for s in range(nsteps):
        e2w = np.exp(2.0 * w)
        vol = 2.0 * np.pi * np.sum(e2w * grid.quad_weights)
        if abs(vol - ROUND_VOLUME) > vol_limit:
            return s, False
        em = 1.0 / e2w
        ab = np.zeros((3, n))
        ab[0, 1:] = -0.5 * dt * em[:-1] * upper[:-1]
        ab[1] = 1.0 - 0.5 * dt * em * center
        ab[2, :-1] = -0.5 * dt * em[1:] * lower[1:]
        rhs = w + 0.5 * dt * (1.0 - em)
        w[:] = solve_banded((1, 1), ab, rhs)
        uv, _, _, _ = solve_u_values(grid, w)
        e2w = np.exp(2.0 * w)
        vol = 2.0 * np.pi * np.sum(e2w * grid.quad_weights)
        a = 2.0 * np.pi * np.sum(uv * np.exp(-uv) * e2w * grid.quad_weights) / vol
        phi += dt * (uv - a)
    return nsteps, True


def run(config: FlowConfig, initial: ConformalMetric) -> Trajectory:
    """Integrate to t_end, recording a fully solved state every record_dt.

    dt halves on step rejection and never grows back (determinism).
    Terminates early once the potential oscillation drops under the
    early-stop threshold.
    """
    state0 = initial_state(initial, config)
    traj = Trajectory(states=[state0])
    _record_gate_transition(traj, state0)
    if state0.funcs.c0_u_minus_a < config.early_stop:
        traj.converged_at = 0.0
        traj.events.append(("converged", 0.0))
        return traj
    grid = initial.grid
    dt_cap = config.dt_init if config.dt_init is not None else stability_dt(initial)
    if config.scheme == "rk4" and dt_cap > stability_dt(initial) * (1 + 1e-12):
        raise ValueError(
            f"dt_init = {dt_cap:.3e} over the explicit stability bound "
            f"{stability_dt(initial):.3e}")
    vol_limit = config.vol_tol * ROUND_VOLUME
    t = 0.0
    w = initial.w.copy()
    phi = np.zeros(grid.n_nodes)
    halvings = 0
    while t < config.t_end - 1e-12:
        t_next = min(t + config.record_dt, config.t_end)
        nst = max(1, int(math.ceil((t_next - t) / dt_cap - 1e-12)))
        dt_seg = (t_next - t) / nst
        w_try = w.copy()
        phi_try = phi.copy()
        if config.scheme == "rk4":
            done, ok = advance_rk4(w_try, phi_try, nst, dt_seg, grid, vol_limit)
        else:
            done, ok = _advance_semi_implicit(w_try, phi_try, nst, dt_seg,
                                              grid, vol_limit, config)
        if not ok:
            halvings += 1
            if halvings > config.max_halvings:
                raise StepReject(
                    f"volume check kept failing after {halvings} dt halvings "
                    f"near t = {t:.6g}")
            traj.events.append(("step_reject", t + done * dt_seg, dt_seg))
            dt_cap = 0.5 * dt_cap
            continue
        w, phi = w_try, phi_try
        t = t_next
        state = make_state(w, phi, t, dt_seg, config, initial)
        traj.states.append(state)
        _record_gate_transition(traj, state)
        if state.funcs.c0_u_minus_a < config.early_stop:
            traj.converged_at = t
            traj.events.append(("converged", t))
            break
    return traj


def _decay_gate(state: FlowState) -> bool:
    """The canonical smallness gate |u - a| <= min(1/4, d'/8)."""
    cap = min(0.25, state.funcs.delta_prime_0 / 8.0)
    return state.funcs.c0_u_minus_a <= cap


def _record_gate_transition(traj: Trajectory, state: FlowState) -> None:
    now = _decay_gate(state)
    before = _decay_gate(traj.states[-2]) if len(traj.states) > 1 else None
    if before is None or now != before:
        traj.events.append(("decay_gate", state.t, "on" if now else "off"))


def check_kahler_class(state: FlowState) -> float:
    """Sup-norm residual of e^{2w(t)} = e^{2w(0)} + (1/2) lap_round phi.

    The two sides are advanced by independent right-hand sides, so this is
    the integrator's principal cross-check.
    """
    if state.initial is None:
        raise ValueError("state carries no initial metric; not from a run")
    lhs = np.exp(2.0 * state.metric.w)
    rhs = np.exp(2.0 * state.initial.w) + 0.5 * laplace_round(
        state.metric.grid, state.phi.values)
    return float(np.max(np.abs(lhs - rhs)))


def log_det_bookkeeping(state: FlowState,
                        initial: ConformalMetric) -> tuple[ScalarField, float]:
    """Volume-form ratio F = log det g(t) / det g(0) and its constant c(t).

    In the conformal gauge F = 2 (w(t) - w(0)); c(t) normalizes the
    potential bookkeeping through
    e^{c(t)} = (1/V) integral e^{-phi - u(0)} dv_0.
    """
    f = 2.0 * (state.metric.w - initial.w)
    u0 = solve_ricci_potential(initial).u.values
    vol0 = volume(initial)
    c = math.log(weighted_integral(
        np.exp(-state.phi.values - u0), initial) / vol0)
    return ScalarField(grid=state.metric.grid, values=f), float(c)


def log_det_residual(state: FlowState, initial: ConformalMetric) -> float:
    """Sup-norm residual of F = u(t) - u(0) - phi(t) - c(t)."""
    f, c = log_det_bookkeeping(state, initial)
    u0 = solve_ricci_potential(initial).u.values
    rhs = state.u.values - u0 - state.phi.values - c
    return float(np.max(np.abs(f.values - rhs)))
