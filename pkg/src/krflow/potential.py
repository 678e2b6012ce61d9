"""Ricci potential solve and the scalar functionals built from it.

The potential u solves the trace equation (complex convention)
(1/2) lap_g u = 1 - K together with the weighted-volume normalization
(1/V) integral e^{-u} dv = 1.  Axisymmetry reduces the PDE to one flux
integration: sin(theta) u'(theta) is the cumulative integral of
2 (1 - K) e^{2w} sin(theta), so the solve is a double quadrature and is
exact for the discrete operator.  Solvability requires the volume to be
4*pi (the discrete Gauss-Bonnet identity is exact, see geometry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (ConformalMetric, ScalarField, ROUND_VOLUME, dtheta,
                       grad_c0_norm, grad_norm_sq, laplace_round, volume,
                       weighted_integral)


class VolumeMismatch(Exception):
    """The metric's volume is off 4*pi: the trace equation has no solution.

    Signals that a metric left the normalized class.
    """


class NormalizationFail(Exception):
    """The normalization constant could not be bracketed (cannot occur for
    finite input; kept as a loud assertion)."""


class DomainError(ValueError):
    """Argument outside the domain of an explicit formula."""


@dataclass(frozen=True)
class RicciPotential:
    """Solved potential with its normalization constant and residuals."""

    u: ScalarField
    norm_const: float
    pde_residual: float
    norm_residual: float

    @property
    def values(self):
        return self.u.values


@dataclass(frozen=True)
class FunctionalBundle:
    """Every scalar functional of (g, u) the monitors consume."""

    a: float
    Y: float
    Z: float
    osc_u: float
    c0_u_minus_a: float
    grad_u_c0: float
    delta_prime_0: float


def solve_u_values(grid, w: np.ndarray) -> tuple[np.ndarray, float, float, float]:
    """Core double-quadrature solve on raw arrays.

    Returns (u, norm_const, pde_residual, norm_residual).  The right-hand
    side is projected onto the discrete solvability constraint before
    integrating; the reported residual is measured against the unprojected
    equation, so any volume defect shows up honestly.
    """
    h = grid.h
    hs = h * grid.sin_nodes
    e2w = np.exp(2.0 * w)
    lap_w = laplace_round(grid, w)
    # 2 (1 - K) e^{2w} = 2 (e^{2w} - 1 + lap w)
    rhs = 2.0 * (e2w - 1.0 + lap_w)
    s = rhs * hs
    mu = s.sum() / hs.sum()
    flux = np.cumsum(s - mu * hs)[:-1]
    du = h * flux / grid.sin_flux[1:-1]
    u0 = np.concatenate(([0.0], np.cumsum(du)))
    vol = 2.0 * np.pi * np.sum(e2w * grid.quad_weights)
    mean = 2.0 * np.pi * np.sum(np.exp(-u0) * e2w * grid.quad_weights) / vol
    c = math.log(mean)
    u = u0 + c
    pde_res = float(np.max(np.abs(
        laplace_round(grid, u) - rhs)) / max(1.0, np.max(np.abs(e2w))))
    norm_res = abs(
        2.0 * np.pi * np.sum(np.exp(-u) * e2w * grid.quad_weights) / vol - 1.0)
    return u, c, pde_res, norm_res


def normalization_constant_bisect(u0: np.ndarray, metric: ConformalMetric,
                                  xtol: float = 1e-12) -> float:
    """Bisection on the monotone map c -> (1/V) integral e^{-(u0+c)} dv - 1.

    The closed form log((1/V) integral e^{-u0} dv) is what the solver uses;
    this routine exists as the independent cross-check of that shortcut.
    The root always lies in [-max|u0|, max|u0|].
    """
    vol = volume(metric)

    def excess(c):
        return weighted_integral(np.exp(-(u0 + c)), metric) / vol - 1.0

    b = float(np.max(np.abs(u0)))
    if b == 0.0 or excess(-b) * excess(b) > 0.0:
        # constant u0 up to rounding; the map is already centered
        return math.log(weighted_integral(np.exp(-u0), metric) / vol)
    lo, hi = -b, b
    if excess(lo) < 0:
        raise NormalizationFail("monotone map not bracketed")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if excess(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_ricci_potential(metric: ConformalMetric, tol: float = 1e-9,
                          initial_shift: float = 0.0) -> RicciPotential:
    """Solve the potential problem for one metric.

    Raises VolumeMismatch when |V - 4 pi| > 10 tol * 4 pi, the discrete
    solvability obstruction.  initial_shift perturbs the pre-normalization
    potential; the result must not depend on it (self-consistency knob).
    """
    vol = volume(metric)
    if abs(vol - ROUND_VOLUME) > 10.0 * tol * ROUND_VOLUME:
        raise VolumeMismatch(
            f"volume {vol:.12g} is off 4*pi by {vol - ROUND_VOLUME:.3e}; "
            "the metric left the normalized class")
    u, c, pde_res, _ = solve_u_values(metric.grid, metric.w)
    if initial_shift != 0.0:
        shifted = u + initial_shift
        mean = weighted_integral(np.exp(-shifted), metric) / vol
        correction = math.log(mean)
        u = shifted + correction
        c += initial_shift + correction
    norm_res = abs(weighted_integral(np.exp(-u), metric) / vol - 1.0)
    if not np.all(np.isfinite(u)):
        raise NormalizationFail("potential solve produced non-finite values")
    field = ScalarField(grid=metric.grid, values=u)
    return RicciPotential(u=field, norm_const=c, pde_residual=pde_res,
                          norm_residual=norm_res)


def _values(u) -> np.ndarray:
    if isinstance(u, RicciPotential):
        return u.u.values
    if isinstance(u, ScalarField):
        return u.values
    return np.asarray(u, dtype=float)


def average_a(u, metric: ConformalMetric) -> float:
    """Weighted average a = (1/V) integral u e^{-u} dv; Jensen gives a <= 0."""
    uv = _values(u)
    return weighted_integral(uv * np.exp(-uv), metric) / volume(metric)


def functional_Y(u, a: float, metric: ConformalMetric) -> float:
    """Y = (1/V) integral (u - a)^2 e^{-u} dv, the Lyapunov functional."""
    uv = _values(u)
    return weighted_integral((uv - a) ** 2 * np.exp(-uv), metric) / volume(metric)


def functional_Z(u, metric: ConformalMetric) -> float:
    """Z = (1/V) integral |grad u|^2 e^{-u} dv (complex gradient norm)."""
    uv = _values(u)
    gsq = grad_norm_sq(uv, metric).values
    return weighted_integral(gsq * np.exp(-uv), metric) / volume(metric)


def delta_prime(a: float, s: float) -> float:
    """Spectral-gap sharpening a / (1 + e^s + a e^s).

    Increasing in a, decreasing in s.  Nonnegative arguments only;
    the boundary values a = 0 and s = 0 are allowed.
    """
    if a < 0.0 or s < 0.0:
        raise DomainError(f"delta_prime needs a, s >= 0, got ({a}, {s})")
    es = math.exp(s)
    return a / (1.0 + es + a * es)


def futaki_integrals(u, metric: ConformalMetric) -> tuple[float, float, float]:
    """Futaki pairings integral X(u) dv over a holomorphic basis.

    Components: the rotation field (X(u) vanishes pointwise for
    axisymmetric data), the meridian dilation field whose potential is the
    axial degree-1 harmonic (X(u) = (1/2) sin(theta) u'; the quadrature is
    nontrivial and the integral vanishes only by the character identity),
    and the off-axis gradient pair (killed exactly by the azimuthal
    integral of e^{i phi}; the vanishing analytic factor is kept explicit).
    """
    g = metric.grid
    uv = _values(u)
    up = dtheta(g, uv)
    rotation = weighted_integral(np.zeros_like(uv), metric)
    dilation = weighted_integral(0.5 * g.sin_nodes * up, metric)
    # profile integral of the off-axis field times its azimuthal average
    azimuthal_factor = 0.0  # (1/2pi) integral_0^{2pi} e^{i phi} d phi
    offaxis = azimuthal_factor * weighted_integral(
        0.5 * (1.0 + g.cos_nodes) * up, metric)
    return float(rotation), float(dilation), float(offaxis)


def complex_hessian_norms(u, metric: ConformalMetric) -> tuple[ScalarField, ScalarField]:
    """Pointwise |mixed Hessian|^2 and |(2,0) Hessian|^2 of a scalar.

    In complex dimension one the mixed part is the complex Laplacian
    squared, ((1/2) e^{-2w} lap_round u)^2, and the (2,0) part is the
    squared trace-free real Hessian in the orthonormal frame, halved:
    (1/4) e^{-4w} (u'' - (2 w' + cot) u')^2.  The bound
    (complex Laplacian)^2 <= n |mixed|^2 is equality here.
    """
    g = metric.grid
    uv = _values(u)
    e2w = np.exp(2.0 * metric.w)
    lap_c = 0.5 * laplace_round(g, uv) / e2w
    mixed = lap_c ** 2
    up = dtheta(g, uv)
    wp = dtheta(g, metric.w)
    cot = g.cos_nodes / g.sin_nodes
    # u'' from the flux Laplacian: u'' = lap_round u - cot u'
    upp = laplace_round(g, uv) - cot * up
    t20 = 0.5 * (upp - (2.0 * wp + cot) * up) / e2w
    pure = t20 ** 2
    return (ScalarField(grid=g, values=mixed), ScalarField(grid=g, values=pure))


def hessian_t20(u, metric: ConformalMetric) -> np.ndarray:
    """Signed trace-free Hessian scalar t20 with |(2,0) Hessian|^2 = t20^2."""
    g = metric.grid
    uv = _values(u)
    up = dtheta(g, uv)
    wp = dtheta(g, metric.w)
    cot = g.cos_nodes / g.sin_nodes
    upp = laplace_round(g, uv) - cot * up
    return 0.5 * (upp - (2.0 * wp + cot) * up) / np.exp(2.0 * metric.w)


def functional_bundle(u, metric: ConformalMetric,
                      lambda_g: float | None = None,
                      delta_measured: float | None = None) -> FunctionalBundle:
    """Assemble every scalar functional of a solved state.

    delta_prime_0 follows the monotonicity remark: the gap argument is
    min(delta_measured, lambda_g - 1) when both are known, clipped at 0.
    """
    uv = _values(u)
    a = average_a(uv, metric)
    y = functional_Y(uv, a, metric)
    z = functional_Z(uv, metric)
    osc = float(uv.max() - uv.min())
    c0 = float(np.max(np.abs(uv - a)))
    gc0 = grad_c0_norm(uv, metric)
    dp0 = 0.0
    gap = None
    if lambda_g is not None:
        gap = lambda_g - 1.0
    if delta_measured is not None:
        gap = delta_measured if gap is None else min(delta_measured, gap)
    if gap is not None:
        dp0 = delta_prime(max(gap, 0.0), osc)
    return FunctionalBundle(a=a, Y=y, Z=z, osc_u=osc, c0_u_minus_a=c0,
                            grad_u_c0=gc0, delta_prime_0=dp0)
