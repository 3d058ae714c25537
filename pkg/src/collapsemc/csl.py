"""Markovian collapse dynamics: linear/normalized SSE and statistics.

The linear equation evolves dψ = {−iH₀ + √γ Σ_x a³ M(x) w(x) − (γ/2) Σ_x
a³ M²(x)} ψ dt in the Itô convention with w white in space and time; the
ensemble mean of |ψ><ψ| solves the mass-density Lindblad equation. The
normalized equation uses centered operators M − <M> and the physical-
measure noise b. Steps are Euler–Maruyama with the Hamiltonian applied as
exact unitary half-steps around the collapse update; dt is chosen so that
γ·(max M eigenvalue)²·a³·dt stays at or below 1e-2.

Ensembles draw per-trajectory noise from counter-based streams keyed by
(master seed, trajectory index), so results are bit-identical for any
batch size or worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import (DegenerateTrajectoryError, FitError, InvalidParameterError,
                     NumericFailureError)
from .hilbert import CslParams, LatticeGrid, LatticeOperator, QuantumState
from .mcstats import jackknife_statistic, mean_se
from .streams import stream

NORM_TOL = 1e-8
DT_STABILITY_TARGET = 1e-2


@dataclass
class WhiteNoiseRealization:
    """White noise w[t][x], i.i.d. normal with variance 1/(dt·a³)."""

    values: np.ndarray
    seed: int = None

    @classmethod
    def draw(cls, grid: LatticeGrid, master_seed: int, index: int = 0):
        rng = stream(master_seed, index)
        scale = 1.0 / np.sqrt(grid.time_step * grid.volume_element)
        vals = scale * rng.standard_normal((grid.n_steps, grid.n_sites))
        return cls(values=vals, seed=master_seed)


@dataclass
class Trajectory:
    """Time-indexed states with the running linear weight and its noise."""

    states: list
    weight: float
    noise: WhiteNoiseRealization
    seed: int = None

    def check_weight(self, tol: float = NORM_TOL):
        final = self.states[-1]
        if abs(self.weight - final.norm_squared) > tol * max(final.norm_squared, 1e-300):
            raise InvalidParameterError("trajectory weight disagrees with final norm")
        return self


@dataclass(frozen=True)
class CatStateSpec:
    """N-particle two-site superposition |L..L> + |R..R>."""

    n_particles: int
    site_left: np.ndarray
    site_right: np.ndarray

    def __post_init__(self):
        if self.n_particles < 1:
            raise InvalidParameterError("n_particles must be at least 1")
        object.__setattr__(self, "site_left", np.asarray(self.site_left, dtype=float))
        object.__setattr__(self, "site_right", np.asarray(self.site_right, dtype=float))

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.site_right - self.site_left))


def choose_dt(params: CslParams, mass_ops, volume_element: float,
              target: float = DT_STABILITY_TARGET) -> float:
    """Largest dt with γ·(max M eigenvalue)²·a³·dt ≤ target."""
    max_eig = 0.0
    for op in mass_ops:
        m = getattr(op, "entries", op)
        max_eig = max(max_eig, float(np.max(np.abs(np.linalg.eigvalsh(m)))))
    rate = params.gamma * max_eig ** 2 * volume_element
    if rate == 0.0:
        return np.inf
    return target / rate


def _op_matrices(ops):
    return [np.asarray(getattr(o, "entries", o), dtype=complex) for o in ops]


def _diagonal_data(ops):
    mats = _op_matrices(ops)
    diag = np.empty((len(mats), mats[0].shape[0]))
    for i, m in enumerate(mats):
        off = m - np.diag(np.diag(m))
        if np.abs(off).max() > 1e-12 * max(1.0, np.abs(m).max()):
            return None
        diag[i] = np.real(np.diag(m))
    return diag


def _half_step_unitary(h0, dt: float):
    if h0 is None:
        return None
    h = np.asarray(getattr(h0, "entries", h0), dtype=complex)
    return expm(-0.5j * dt * h)


def _check_finite(arr, step_index):
    if not np.all(np.isfinite(arr.view(float))):
        raise NumericFailureError("non-finite amplitudes", step_index=step_index)


def _linear_update(states, w, mdiag, m2sum, coef_noise, coef_drift):
    noise = (w @ mdiag) * coef_noise
    return states + (noise - coef_drift * m2sum[None, :]) * states


def _normalized_update(states, w, mdiag, m2sum, coef_noise, coef_drift):
    probs = np.abs(states) ** 2
    probs /= probs.sum(axis=1, keepdims=True)
    exp_m = probs @ mdiag.T                       # <M_x> per trajectory
    lin = (w @ mdiag) - (w * exp_m).sum(axis=1, keepdims=True)
    cross = exp_m @ mdiag                         # Σ_x M_x <M_x>
    quad = m2sum[None, :] - 2.0 * cross + (exp_m ** 2).sum(axis=1, keepdims=True)
    return states + (coef_noise * lin - coef_drift * quad) * states


def step_linear_sse(psi: QuantumState, noise_slice, ops, params: CslParams,
                    dt: float, h0=None, volume_element: float = 1.0) -> QuantumState:
    """One Euler–Maruyama step of the linear collapse equation.

    Norm is not preserved; the Hamiltonian, when given, is applied as exact
    half-steps before and after the collapse update.
    """
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    w = np.asarray(noise_slice, dtype=float)
    if w.shape != (len(ops),):
        raise InvalidParameterError("noise slice dimension must match operator count")
    mats = _op_matrices(ops)
    uh = _half_step_unitary(h0, dt)
    amps = psi.amplitudes.copy()
    if uh is not None:
        amps = uh @ amps
    coef_noise = np.sqrt(params.gamma) * volume_element * dt
    coef_drift = 0.5 * params.gamma * volume_element * dt
    delta = np.zeros_like(amps)
    for m, wx in zip(mats, w):
        delta += coef_noise * wx * (m @ amps)
        delta -= coef_drift * (m @ (m @ amps))
    amps = amps + delta
    if uh is not None:
        amps = uh @ amps
    _check_finite(amps, None)
    return QuantumState(amps)


def step_normalized_sse(psi_tilde: QuantumState, noise_slice, ops, params: CslParams,
                        dt: float, h0=None, volume_element: float = 1.0) -> QuantumState:
    """One Itô step of the norm-preserving equation, renormalized on exit."""
    if abs(psi_tilde.norm_squared - 1.0) > 2 * NORM_TOL:
        raise InvalidParameterError("step_normalized_sse expects a unit-norm state")
    b = np.asarray(noise_slice, dtype=float)
    mats = _op_matrices(ops)
    uh = _half_step_unitary(h0, dt)
    amps = psi_tilde.amplitudes.copy()
    if uh is not None:
        amps = uh @ amps
    coef_noise = np.sqrt(params.gamma) * volume_element * dt
    coef_drift = 0.5 * params.gamma * volume_element * dt
    delta = np.zeros_like(amps)
    for m, bx in zip(mats, b):
        ev = float(np.real(np.vdot(amps, m @ amps)) / np.real(np.vdot(amps, amps)))
        centered = m @ amps - ev * amps
        delta += coef_noise * bx * centered
        delta -= coef_drift * (m @ centered - ev * centered)
    amps = amps + delta
    if uh is not None:
        amps = uh @ amps
    _check_finite(amps, None)
    return QuantumState(amps / np.linalg.norm(amps))


def girsanov_normalize(traj: Trajectory):
    """Normalize the states of a linear trajectory; return them with the
    final weight <ψ|ψ> used by the cooked measure."""
    normalized = []
    for st in traj.states:
        if st.norm_squared <= 0.0:
            raise DegenerateTrajectoryError("zero-norm state in trajectory")
        normalized.append(st.normalized())
    return normalized, traj.states[-1].norm_squared


def signal_field(traj: Trajectory, ops, params: CslParams) -> np.ndarray:
    """Reconstruct w_s(x) = 2√γ <M_σ(x)>_s + b_s(x) along a physical-measure
    trajectory (states must be normalized; noise holds b)."""
    mats = _op_matrices(ops)
    n_steps, n_sites = traj.noise.values.shape
    out = np.array(traj.noise.values, dtype=float)
    root = 2.0 * np.sqrt(params.gamma)
    for k in range(n_steps):
        psi = traj.states[k]
        for x, m in enumerate(mats):
            out[k, x] += root * psi.expectation(m)
    return out


# ---------------------------------------------------------------------------
# batched ensemble engine
# ---------------------------------------------------------------------------

@dataclass
class CslScenario:
    """Grid, operators and initial state for an ensemble run."""

    grid: LatticeGrid
    params: CslParams
    mass_ops: list
    psi0: np.ndarray
    h0: object = None
    record_stride: int = 10

    def __post_init__(self):
        self.psi0 = np.asarray(self.psi0, dtype=complex)
        self.psi0 = self.psi0 / np.linalg.norm(self.psi0)
        if _diagonal_data(self.mass_ops) is None:
            raise InvalidParameterError(
                "ensemble engine requires collapse operators diagonal in one basis")

    def record_steps(self) -> np.ndarray:
        steps = np.arange(0, self.grid.n_steps + 1, self.record_stride)
        if steps[-1] != self.grid.n_steps:
            steps = np.append(steps, self.grid.n_steps)
        return steps


@dataclass
class EnsembleStats:
    """Block-summed ensemble records for jackknife error estimates."""

    record_times: np.ndarray
    rho_block_totals: np.ndarray        # (n_blocks, n_rec, dim, dim)
    block_counts: np.ndarray
    weights: np.ndarray                 # (n_traj,) final linear weights (or 1)
    probe_values: np.ndarray            # (n_traj, n_rec, n_probes) <M(x_p)>
    collapse_sites: np.ndarray = None   # (n_traj,) argmax site or -1
    max_norm_drift: float = 0.0

    @property
    def n_traj(self) -> int:
        return len(self.weights)

    def rho_mean(self, rec_index: int = -1) -> np.ndarray:
        tot = self.rho_block_totals.sum(axis=0)
        return tot[rec_index] / self.n_traj

    def trace_distance_to(self, target, rec_index: int = -1):
        from .hilbert import DensityMatrix, trace_distance
        totals = self.rho_block_totals[:, rec_index]
        return jackknife_statistic(
            totals, self.block_counts,
            lambda m: trace_distance(DensityMatrix(0.5 * (m + m.conj().T)), target))


def _noise_batch(grid: LatticeGrid, master_seed: int, indices) -> np.ndarray:
    scale = 1.0 / np.sqrt(grid.time_step * grid.volume_element)
    out = np.empty((len(indices), grid.n_steps, grid.n_sites))
    for row, idx in enumerate(indices):
        out[row] = stream(master_seed, int(idx)).standard_normal(
            (grid.n_steps, grid.n_sites))
    return out * scale


def _run_range(scenario: CslScenario, master_seed: int, start: int, count: int,
               normalized: bool, probe_sites, collapse_threshold, batch: int = 512):
    grid = scenario.grid
    dt, vol = grid.time_step, grid.volume_element
    mdiag = _diagonal_data(scenario.mass_ops)
    m2sum = (mdiag ** 2).sum(axis=0)
    uh = _half_step_unitary(scenario.h0, dt)
    rec_steps = scenario.record_steps()
    rec_lookup = {int(s): i for i, s in enumerate(rec_steps)}
    dim = len(scenario.psi0)
    coef_noise = np.sqrt(scenario.params.gamma) * vol * dt
    coef_drift = 0.5 * scenario.params.gamma * vol * dt
    update = _normalized_update if normalized else _linear_update

    rho_rec = np.zeros((len(rec_steps), dim, dim), dtype=complex)
    weights = np.empty(count)
    probes = np.zeros((count, len(rec_steps), len(probe_sites)))
    collapse_sites = np.full(count, -1, dtype=int)
    max_drift = 0.0

    for lo in range(0, count, batch):
        hi = min(lo + batch, count)
        idx = np.arange(start + lo, start + hi)
        noise = _noise_batch(grid, master_seed, idx)
        states = np.tile(scenario.psi0, (hi - lo, 1))

        def record(step):
            ri = rec_lookup.get(step)
            if ri is None:
                return
            rho_rec[ri] += np.einsum("na,nb->ab", states, states.conj())
            if len(probe_sites):
                p = np.abs(states) ** 2
                p = p / p.sum(axis=1, keepdims=True)
                probes[lo:hi, ri, :] = p @ mdiag[list(probe_sites)].T

        record(0)
        for k in range(grid.n_steps):
            if uh is not None:
                states = states @ uh.T
            states = update(states, noise[:, k, :], mdiag, m2sum,
                            coef_noise, coef_drift)
            if uh is not None:
                states = states @ uh.T
            if normalized:
                norms = np.sqrt(np.einsum("na,na->n", states.conj(), states).real)
                max_drift = max(max_drift, float(np.abs(norms - 1.0).max()))
                states = states / norms[:, None]
            record(k + 1)
        _check_finite(states, grid.n_steps)
        if normalized:
            weights[lo:hi] = 1.0
            pops = np.abs(states) ** 2
            top = pops.argmax(axis=1)
            collapsed = pops.max(axis=1) > collapse_threshold
            collapse_sites[lo:hi] = np.where(collapsed, top, -1)
        else:
            weights[lo:hi] = np.einsum("na,na->n", states.conj(), states).real
    return rho_rec, weights, probes, collapse_sites, max_drift


def _worker(args):
    return _run_range(*args)


def _run_ensemble(scenario: CslScenario, n_traj: int, master_seed: int,
                  normalized: bool, probe_sites=(), collapse_threshold: float = 0.99,
                  n_blocks: int = 50, threads: int = 1) -> EnsembleStats:
    n_blocks = min(n_blocks, n_traj)
    edges = np.linspace(0, n_traj, n_blocks + 1).astype(int)
    pairs = [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    jobs = [(scenario, master_seed, lo, hi - lo, normalized,
             tuple(probe_sites), collapse_threshold) for lo, hi in pairs]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_run_range(*j) for j in jobs]

    rec_steps = scenario.record_steps()
    dim = len(scenario.psi0)
    rho_blocks = np.zeros((len(pairs), len(rec_steps), dim, dim), dtype=complex)
    weights = np.empty(n_traj)
    probes = np.zeros((n_traj, len(rec_steps), len(probe_sites)))
    collapse_sites = np.full(n_traj, -1, dtype=int)
    max_drift = 0.0
    for b, ((lo, hi), res) in enumerate(zip(pairs, results)):
        rho_rec, w, pr, cs, drift = res
        rho_blocks[b] = rho_rec
        weights[lo:hi] = w
        probes[lo:hi] = pr
        collapse_sites[lo:hi] = cs
        max_drift = max(max_drift, drift)
    return EnsembleStats(
        record_times=rec_steps * scenario.grid.time_step,
        rho_block_totals=rho_blocks,
        block_counts=np.array([hi - lo for lo, hi in pairs]),
        weights=weights,
        probe_values=probes,
        collapse_sites=collapse_sites if normalized else None,
        max_norm_drift=max_drift)


def run_linear_ensemble(scenario: CslScenario, n_traj: int, master_seed: int,
                        n_blocks: int = 50, threads: int = 1,
                        probe_sites=()) -> EnsembleStats:
    """Ensemble of linear trajectories; rho records are E[|ψ><ψ|] sums."""
    return _run_ensemble(scenario, n_traj, master_seed, normalized=False,
                         probe_sites=probe_sites, n_blocks=n_blocks, threads=threads)


def run_normalized_ensemble(scenario: CslScenario, n_traj: int, master_seed: int,
                            n_blocks: int = 50, threads: int = 1, probe_sites=(),
                            collapse_threshold: float = 0.99) -> EnsembleStats:
    """Physical-measure ensemble of the normalized equation."""
    return _run_ensemble(scenario, n_traj, master_seed, normalized=True,
                         probe_sites=probe_sites, collapse_threshold=collapse_threshold,
                         n_blocks=n_blocks, threads=threads)


def run_trajectory(scenario: CslScenario, master_seed: int, index: int = 0,
                   normalized: bool = True) -> Trajectory:
    """Single full-resolution trajectory (states at every step)."""
    grid = scenario.grid
    noise = WhiteNoiseRealization.draw(grid, master_seed, index)
    psi = QuantumState(scenario.psi0.copy())
    states = [psi]
    stepper = step_normalized_sse if normalized else step_linear_sse
    for k in range(grid.n_steps):
        psi = stepper(psi, noise.values[k], scenario.mass_ops, scenario.params,
                      grid.time_step, h0=scenario.h0,
                      volume_element=grid.volume_element)
        states.append(psi)
    weight = 1.0 if normalized else states[-1].norm_squared
    return Trajectory(states=states, weight=weight, noise=noise, seed=master_seed)


@dataclass
class MartingaleReport:
    times: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    initial: float
    max_deviation_in_se: float
    passed: bool


def martingale_check(stats: EnsembleStats, probe_index: int, initial: float,
                     n_se: float = 3.0) -> MartingaleReport:
    """Check E[<M(x)>_t] = <M(x)>_0 at every recorded time.

    stats must come from a physical-measure (normalized) ensemble with the
    probe recorded; `initial` is the exact t=0 expectation.
    """
    vals = stats.probe_values[:, :, probe_index]
    means = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / np.sqrt(stats.n_traj)
    # records where all trajectories agree (t=0) are exact up to roundoff;
    # flooring the SE keeps their ratio at the roundoff scale instead of 0/0
    floor = 1e-10 * max(1.0, abs(initial))
    dev = np.abs(means - initial) / np.maximum(ses, floor)
    worst = float(dev.max())
    return MartingaleReport(times=stats.record_times, means=means, ses=ses,
                            initial=initial, max_deviation_in_se=worst,
                            passed=bool(worst < n_se))


@dataclass
class AmplificationFit:
    rate: float
    r_squared: float
    times: np.ndarray
    coherences: np.ndarray
    n_particles: int


def effective_cat_ops(grid: LatticeGrid, spec: CatStateSpec, params: CslParams) -> list:
    """Collapse operators restricted to the 2-dimensional {|L>, |R>} space.

    All N particles sit at the same peak position, so M_σ(x) acts as
    N·m·g_σ(x − y_peak) on each branch.
    """
    if spec.separation < 5.0 * params.sigma:
        raise InvalidParameterError("cat peaks must satisfy separation >= 5 sigma")
    pref = (2.0 * np.pi) ** (-1.5) / params.sigma ** 3
    m = params.masses[0]
    ops = []
    for x in grid.spatial_points:
        gl = pref * np.exp(-np.sum((x - spec.site_left) ** 2) / (2 * params.sigma ** 2))
        gr = pref * np.exp(-np.sum((x - spec.site_right) ** 2) / (2 * params.sigma ** 2))
        ops.append(LatticeOperator(
            spec.n_particles * m * np.diag([gl, gr]).astype(complex),
            label="cat_mass"))
    return ops


def cat_decoherence_rate(grid: LatticeGrid, spec: CatStateSpec, params: CslParams) -> float:
    """Closed-form off-diagonal decay rate of the effective 2-state model:
    (γ/2)·a³·Σ_x (M_L(x) − M_R(x))²."""
    ops = effective_cat_ops(grid, spec, params)
    diff = np.array([float(np.real(o.entries[0, 0] - o.entries[1, 1])) for o in ops])
    return 0.5 * params.gamma * grid.volume_element * float((diff ** 2).sum())


def amplification_rate(spec: CatStateSpec, params: CslParams, grid: LatticeGrid,
                       n_traj: int = 4000, master_seed: int = 11,
                       horizon_rates: float = 2.5, threads: int = 1) -> AmplificationFit:
    """Fit the exponential decay of the cat-state coherence.

    Runs the normalized collapse dynamics in the effective 2-state space,
    then a weighted least-squares line through log|ρ_LR(t)|, discarding the
    first 10% of points and anything at the Monte-Carlo noise floor. Raises
    FitError when R² < 0.99.
    """
    ops = effective_cat_ops(grid, spec, params)
    rate_est = cat_decoherence_rate(grid, spec, params)
    if rate_est <= 0:
        raise InvalidParameterError("cat scenario has vanishing collapse rate")
    dt = min(choose_dt(params, ops, grid.volume_element), 0.05 / rate_est)
    horizon = horizon_rates / rate_est
    n_steps = max(40, int(np.ceil(horizon / dt)))
    run_grid = LatticeGrid(grid.spatial_points, grid.spacing,
                           horizon / n_steps, n_steps)
    scenario = CslScenario(grid=run_grid, params=params, mass_ops=ops,
                           psi0=np.array([1.0, 1.0]) / np.sqrt(2.0),
                           record_stride=max(1, n_steps // 40))
    stats = run_normalized_ensemble(scenario, n_traj, master_seed, threads=threads)

    totals = stats.rho_block_totals
    nrec = totals.shape[1]
    coh = np.empty(nrec)
    coh_se = np.empty(nrec)
    for ri in range(nrec):
        coh[ri], coh_se[ri] = jackknife_statistic(
            totals[:, ri], stats.block_counts, lambda m: abs(m[0, 1]))
    times = stats.record_times

    lo = max(1, int(0.1 * nrec))
    keep = (np.arange(nrec) >= lo) & (coh > 1e-6) & (coh > 5.0 * coh_se)
    if keep.sum() < 3:
        raise FitError("too few usable points for coherence fit",
                       times=times, values=coh, r_squared=0.0)
    x = times[keep]
    y = np.log(coh[keep])
    wts = (coh[keep] / coh_se[keep]) ** 2
    wsum = wts.sum()
    xm = (wts * x).sum() / wsum
    ym = (wts * y).sum() / wsum
    slope = (wts * (x - xm) * (y - ym)).sum() / (wts * (x - xm) ** 2).sum()
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_res = (wts * resid ** 2).sum()
    ss_tot = (wts * (y - ym) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    if r2 < 0.99:
        raise FitError("coherence decay fit below R^2 = 0.99",
                       times=x, values=coh[keep], r_squared=float(r2))
    return AmplificationFit(rate=float(-slope), r_squared=float(r2),
                            times=times, coherences=coh,
                            n_particles=spec.n_particles)


def emit_trajectory_rows(trajectories, ops, dt: float, probe_sites,
                         record_stride: int = 1) -> list:
    """CSV-ready rows (seed, t, weight, <M(x)> per probe, norm error)."""
    mats = _op_matrices(ops)
    rows = []
    for traj in trajectories:
        n_steps = len(traj.states) - 1
        for k in range(0, n_steps + 1, record_stride):
            st = traj.states[k]
            row = {
                "seed": traj.seed,
                "t": k * dt,
                "weight": st.norm_squared,
                "norm_error": abs(np.sqrt(st.norm_squared) - 1.0),
            }
            for p in probe_sites:
                row[f"m_probe_{p}"] = st.expectation(mats[p])
            rows.append(row)
    return rows
