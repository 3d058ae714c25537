"""Regularized scalar propagators and collapse-strength integrals.

The regulated two-point kernel is the Pauli-Villars pair D = D^{m_b} − D^Λ.
Single-mass propagators are evaluated with a sharp configured momentum
cutoff (they are only conditionally convergent); the PV difference decays
like 1/p² and is integrated as one absolutely convergent radial integral
after analytic angular integration.

Spacetime lattice kernels are averaged over time cells: in momentum space
this multiplies each mass term by sinc²(ω dt/2). Cell averaging makes the
kernel diagonal finite (the raw PV propagator is log-divergent at
coincident times) and makes dt²·Σ over lattice cells equal the continuum
double-time integral exactly, so lattice exponents can be compared to the
closed forms below without discretization bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import k0 as _scipy_k0, k1 as _scipy_k1

from .errors import InvalidParameterError, QuadratureFailureError

TWO_PI_SQ = 2.0 * np.pi ** 2      # (2π)³ / (4π)
FOUR_PI_SQ = (2.0 * np.pi) ** 2


@dataclass(frozen=True)
class PropagatorSpec:
    """Boson mass, PV cutoff, coupling and quadrature configuration."""

    boson_mass: float
    cutoff: float
    coupling: float = 1.0
    momentum_cutoff_multiplier: float = 50.0
    min_nodes: int = 256

    def __post_init__(self):
        if not (self.cutoff > self.boson_mass > 0.0):
            raise InvalidParameterError("require cutoff > boson_mass > 0")
        if self.coupling < 0.0:
            raise InvalidParameterError("coupling must be non-negative")
        if self.min_nodes < 64:
            raise InvalidParameterError("node count must be at least 64")


def bessel_k0(x: float) -> float:
    """Modified Bessel function K₀ (relative accuracy better than 1e-10)."""
    if x <= 0.0:
        raise InvalidParameterError("bessel_k0 requires x > 0")
    return float(_scipy_k0(x))


def bessel_k1(x: float) -> float:
    """Modified Bessel function K₁, same domain contract as bessel_k0."""
    if x <= 0.0:
        raise InvalidParameterError("bessel_k1 requires x > 0")
    return float(_scipy_k1(x))


def _panel_nodes(pmax: float, n_panels: int, order: int = 8):
    """Composite Gauss-Legendre nodes/weights on [0, pmax]."""
    xg, wg = leggauss(order)
    edges = np.linspace(0.0, pmax, n_panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1] - edges[0])
    p = (mid[:, None] + half * xg[None, :]).ravel()
    w = np.broadcast_to(half * wg[None, :], (n_panels, len(wg))).ravel()
    return p, w


def _radial_integral(integrand, pmax: float, osc_scale: float,
                     min_nodes: int, rtol: float = 1e-6, what: str = "integral"):
    """Integrate `integrand(p)` on [0, pmax] with oscillation-aware panels.

    Runs once and once more at doubled panel count; a relative disagreement
    above rtol raises QuadratureFailureError. `integrand` may return a
    stacked array whose last axis runs over p.
    """
    n_panels = max(16, int(np.ceil(min_nodes / 8.0)),
                   2 * int(np.ceil(pmax * max(osc_scale, 1e-12) / np.pi)))
    results = []
    for panels in (n_panels, 2 * n_panels):
        p, w = _panel_nodes(pmax, panels)
        vals = integrand(p)
        results.append(np.asarray(vals) @ w)
    coarse, fine = results
    scale = max(np.max(np.abs(fine)), 1e-300)
    if np.max(np.abs(fine - coarse)) > rtol * scale:
        raise QuadratureFailureError(
            f"{what}: refinement changed result beyond rtol={rtol}",
            estimates=(coarse, fine))
    return fine


def _j0(z: np.ndarray) -> np.ndarray:
    return np.sinc(z / np.pi)


def vacuum_propagator(spec: PropagatorSpec, x, y, mass: float) -> complex:
    """Single-mass propagator D^m(x,y) at the configured momentum cutoff.

    x and y are events (t, 3-vector). The momentum integral
    ∫ d³p e^{−iω Δt + ip·Δx} / (2(2π)³ ω) is reduced to a radial quadrature
    after the angular integration; the sharp cutoff is part of the contract.
    """
    if mass <= 0.0:
        raise InvalidParameterError("mass must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = x[0] - y[0]
    r = float(np.linalg.norm(x[1:] - y[1:]))
    scale = max(r, abs(dt), 1.0 / mass)
    pmax = spec.momentum_cutoff_multiplier * max(mass, 1.0 / scale)

    def integrand(p):
        om = np.sqrt(p * p + mass * mass)
        return p * p * _j0(p * r) * np.exp(-1j * om * dt) / (2.0 * om) / TWO_PI_SQ

    # panels must also resolve the dispersion turnover at p ~ mass
    val = _radial_integral(integrand, pmax, osc_scale=r + abs(dt) + 2.0 / mass,
                           min_nodes=spec.min_nodes, what="vacuum_propagator")
    return complex(val)


def pv_propagator(spec: PropagatorSpec, x, y, cell_dt: float = 0.0) -> complex:
    """PV-regularized propagator D^{m_b}(x,y) − D^Λ(x,y).

    With cell_dt > 0 both mass terms carry the time-cell-average factor
    sinc²(ω·cell_dt/2) and Δt is read as a midpoint difference.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = x[0] - y[0]
    r = float(np.linalg.norm(x[1:] - y[1:]))
    vals = _pv_values(spec, np.array([dt]), r, cell_dt)
    return complex(vals[0])


def _pv_values(spec: PropagatorSpec, dts: np.ndarray, r: float,
               cell_dt: float) -> np.ndarray:
    """PV propagator at one spatial separation for a batch of time lags."""
    mb, lam = spec.boson_mass, spec.cutoff
    tmax = float(np.max(np.abs(dts))) if len(dts) else 0.0
    pmax = spec.momentum_cutoff_multiplier * max(lam, 1.0 / max(cell_dt, 1e-12)
                                                 if cell_dt > 0.0 else lam)
    osc = r + tmax + cell_dt + 2.0 / mb

    def integrand(p):
        out = np.zeros((len(dts), len(p)), dtype=complex)
        ang = p * p * _j0(p * r) / TWO_PI_SQ
        for mass, sign in ((mb, 1.0), (lam, -1.0)):
            om = np.sqrt(p * p + mass * mass)
            w = ang / (2.0 * om)
            if cell_dt > 0.0:
                w = w * _j0(0.5 * om * cell_dt) ** 2
            out += sign * np.exp(-1j * np.outer(dts, om)) * w[None, :]
        return out

    return _radial_integral(integrand, pmax, osc_scale=osc,
                            min_nodes=spec.min_nodes, what="pv_propagator")


def pv_kernel_matrix(spec: PropagatorSpec, times: np.ndarray, points: np.ndarray,
                     cell_dt: float = 0.0) -> np.ndarray:
    """Spacetime PV kernel over a lattice, time-major point ordering.

    times: midpoint time nodes (length n_t); points: (n_x, 3) site
    coordinates. Entry ((k,i),(l,j)) is D(t_k − t_l, |x_i − x_j|), cell
    averaged in time when cell_dt is the step size. Hermitian by
    construction (D(−Δt) = D(Δt)*).
    """
    times = np.asarray(times, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n_t, n_x = len(times), len(points)
    diffs = points[:, None, :] - points[None, :, :]
    rmat = np.linalg.norm(diffs, axis=-1)
    r_unique, r_inv = np.unique(rmat.round(decimals=12).ravel(), return_inverse=True)
    dt_pos = np.array([times[k] - times[0] for k in range(n_t)])

    # values[ri][k] = D(k·dt, r_unique[ri]) for k >= 0
    vals = np.empty((len(r_unique), n_t), dtype=complex)
    for ri, r in enumerate(r_unique):
        vals[ri] = _pv_values(spec, dt_pos, float(r), cell_dt)

    kernel = np.empty((n_t * n_x, n_t * n_x), dtype=complex)
    r_idx = r_inv.reshape(n_x, n_x)
    for k in range(n_t):
        for l in range(n_t):
            block = vals[r_idx, abs(k - l)]
            if k < l:
                block = np.conj(block)
            kernel[k * n_x:(k + 1) * n_x, l * n_x:(l + 1) * n_x] = block
    return 0.5 * (kernel + kernel.conj().T)


def g_infinity(spec: PropagatorSpec, r: float, mass: float) -> float:
    """Infinite-horizon double-time integral 2·K₀(m r)/(2π)²."""
    if r <= 0.0:
        raise InvalidParameterError("g_infinity requires r > 0")
    if mass <= 0.0:
        raise InvalidParameterError("mass must be positive")
    return 2.0 * bessel_k0(mass * r) / FOUR_PI_SQ


def g_t_quadrature(spec: PropagatorSpec, r: float, horizon: float) -> float:
    """PV-subtracted G_T(r) = ∫ d³p/(2π)³ e^{−ip·r} (1 − cos(Tω))/ω³."""
    if horizon <= 0.0:
        raise InvalidParameterError("horizon must be positive")
    mb, lam = spec.boson_mass, spec.cutoff
    scale = max(r, 1.0 / mb)
    pmax = spec.momentum_cutoff_multiplier * max(lam, 1.0 / scale)

    def integrand(p):
        ang = p * p * _j0(p * r) / TWO_PI_SQ
        out = np.zeros(len(p))
        for mass, sign in ((mb, 1.0), (lam, -1.0)):
            om = np.sqrt(p * p + mass * mass)
            out += sign * ang * (1.0 - np.cos(horizon * om)) / om ** 3
        return out

    val = _radial_integral(integrand, pmax, osc_scale=r + horizon + 2.0 / mb,
                           min_nodes=spec.min_nodes, what="g_t_quadrature")
    return float(val)


def omega_infinity(spec: PropagatorSpec, r: float) -> float:
    """Closed-form collapse exponent plateau in separation r.

    Ω_∞(r) = (g²/(2π)²)·(K₀(m_b r) − K₀(Λ r) − ln(Λ/m_b)); non-positive,
    tends to 0 as r → 0⁺ and to the plateau −(g²/(2π)²) ln(Λ/m_b) at large r.
    """
    if r <= 0.0:
        raise InvalidParameterError("omega_infinity requires r > 0")
    g = spec.coupling
    mb, lam = spec.boson_mass, spec.cutoff
    val = (g * g / FOUR_PI_SQ) * (bessel_k0(mb * r) - bessel_k0(lam * r)
                                  - np.log(lam / mb))
    return float(min(val, 0.0)) if val > 0.0 else float(val)


def omega_plateau(spec: PropagatorSpec) -> float:
    """Large-separation limit −(g²/(2π)²)·ln(Λ/m_b)."""
    return -(spec.coupling ** 2 / FOUR_PI_SQ) * float(np.log(spec.cutoff / spec.boson_mass))


def omega_from_quadrature(spec: PropagatorSpec, r: float, horizon: float) -> float:
    """Finite-horizon exponent Ω_T(r) = (g²/2)·[G_T(r) − G_T(0)].

    Converges to omega_infinity(r) as the horizon grows; g = 0 gives 0.
    """
    if r <= 0.0:
        raise InvalidParameterError("omega_from_quadrature requires r > 0")
    g = spec.coupling
    if g == 0.0:
        return 0.0
    gt_r = g_t_quadrature(spec, r, horizon)
    gt_0 = g_t_quadrature(spec, 0.0, horizon)
    return float(0.5 * g * g * (gt_r - gt_0))


def tabulate_omega(spec: PropagatorSpec, r_values, horizon: float) -> list:
    """Rows (r, Ω_∞, Ω_T, G_∞) for the CLI tabulation sub-command."""
    rows = []
    for r in r_values:
        rows.append({
            "r": float(r),
            "omega_infinity": omega_infinity(spec, float(r)),
            "omega_horizon": omega_from_quadrature(spec, float(r), horizon),
            "g_infinity": g_infinity(spec, float(r), spec.boson_mass),
        })
    return rows
