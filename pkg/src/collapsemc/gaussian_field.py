"""Complex Gaussian random fields on finite lattices.

A zero-mean complex Gaussian field is fixed by its covariance kernel
Γ(x,y) = E[ξ(x)ξ*(y)] and relation kernel S(x,y) = E[ξ(x)ξ(y)]. Sampling
goes through the real 2n-dimensional stacked representation (real and
imaginary parts), which stays valid when S ≠ 0 breaks circular symmetry.
Kernels that are indefinite within a declared floor are clipped to the
nearest positive semi-definite kernel and the clipped mass is reported.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NotPositiveSemidefiniteError, NumericFailureError
from .streams import stream

log = logging.getLogger(__name__)

KERNEL_SYMMETRY_TOL = 1e-10


@dataclass
class KernelPair:
    """Covariance kernel Γ (Hermitian) and relation kernel S (symmetric).

    psd_floor bounds how negative the stacked matrix [[Γ,S],[S*,Γ*]] may be
    before factorization refuses to clip; None selects 1e-9 × max diag Γ.
    """

    gamma: np.ndarray
    relation: np.ndarray
    psd_floor: float = None

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=complex)
        self.relation = np.asarray(self.relation, dtype=complex)
        n = self.gamma.shape[0]
        if self.gamma.shape != (n, n) or self.relation.shape != (n, n):
            raise InvalidParameterError("kernels must be square and same size")
        scale = max(1.0, np.abs(self.gamma).max())
        if np.abs(self.gamma - self.gamma.conj().T).max() > KERNEL_SYMMETRY_TOL * scale:
            raise InvalidParameterError("covariance kernel must be Hermitian")
        s_scale = max(1.0, np.abs(self.relation).max())
        if np.abs(self.relation - self.relation.T).max() > KERNEL_SYMMETRY_TOL * s_scale:
            raise InvalidParameterError("relation kernel must be symmetric")
        if self.psd_floor is None:
            self.psd_floor = 1e-9 * max(float(np.abs(np.diag(self.gamma)).max()), 1.0)

    @property
    def n_points(self) -> int:
        return self.gamma.shape[0]

    def stacked_real(self) -> np.ndarray:
        """Real covariance of (Re ξ, Im ξ); spectrum is half that of the
        complex stacked matrix [[Γ,S],[S*,Γ*]]."""
        g, s = self.gamma, self.relation
        top = np.hstack([(g + s).real, (s - g).imag])
        bot = np.hstack([(s + g).imag, (g - s).real])
        c = 0.5 * np.vstack([top, bot])
        return 0.5 * (c + c.T)

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.gamma).tobytes())
        h.update(np.ascontiguousarray(self.relation).tobytes())
        return h.hexdigest()


@dataclass
class SamplingFactor:
    """Factor F of the (clipped) stacked real covariance: F Fᵀ reproduces it."""

    factor: np.ndarray           # (2n, m) real
    n_points: int
    clipped_mass: float
    kernel_hash: str = ""

    def reconstruct(self) -> np.ndarray:
        return self.factor @ self.factor.T


@dataclass
class FieldSample:
    """One realization of the complex field over the lattice points."""

    values: np.ndarray
    seed: int = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if not np.all(np.isfinite(self.values.view(float))):
            raise NumericFailureError("field sample contains non-finite entries")


@dataclass
class QuarticReweightSpec:
    """Quartic tilt strength λ and the sextic regulator ε that keeps the
    reweighted measure normalizable."""

    strength: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.strength != 0.0 and self.epsilon <= 0.0:
            raise InvalidParameterError("epsilon must be positive when strength != 0")
        if self.epsilon < 0.0:
            raise InvalidParameterError("epsilon must be non-negative")


def factor_kernel(pair: KernelPair) -> SamplingFactor:
    """Eigen-factorize the stacked real representation of (Γ, S).

    Eigenvalues of the complex stacked matrix in [−psd_floor, 0) are clipped
    to zero (total clipped mass reported and logged); anything below the
    floor raises NotPositiveSemidefiniteError carrying the offending value.
    """
    c = pair.stacked_real()
    evals, evecs = np.linalg.eigh(c)
    stacked = 2.0 * evals          # complex stacked spectrum
    min_eig = float(stacked.min())
    if min_eig < -pair.psd_floor:
        raise NotPositiveSemidefiniteError(
            f"stacked kernel eigenvalue {min_eig:.6e} below -psd_floor",
            min_eigenvalue=min_eig)
    clipped_mass = float(np.abs(evals[evals < 0.0]).sum())
    evals = np.clip(evals, 0.0, None)
    if clipped_mass > 0.0:
        log.info("factor_kernel clipped mass %.3e (min stacked eigenvalue %.3e)",
                 clipped_mass, min_eig)
    keep = evals > 0.0
    factor = evecs[:, keep] * np.sqrt(evals[keep])
    return SamplingFactor(factor=factor, n_points=pair.n_points,
                          clipped_mass=clipped_mass, kernel_hash=pair.hash())


def sample_fields(factor: SamplingFactor, n_samples: int, seed: int,
                  stream_index: int = 0) -> np.ndarray:
    """Draw an (n_samples, n_points) array of field realizations."""
    rng = stream(seed, stream_index)
    z = rng.standard_normal((n_samples, factor.factor.shape[1]))
    u = z @ factor.factor.T
    n = factor.n_points
    return u[:, :n] + 1j * u[:, n:]


def sample_field(factor: SamplingFactor, seed: int) -> FieldSample:
    """Draw a single realization; same seed gives the identical sample."""
    return FieldSample(values=sample_fields(factor, 1, seed)[0], seed=seed)


def relation_factor(kernel: np.ndarray) -> tuple:
    """Factor a complex symmetric relation kernel C into two real eigenbases.

    Returns (Va, sa, Vb, sb) with complex scales such that the field
    η = Va·(sa ⊙ g) + Vb·(sb ⊙ h), for independent standard normal g, h,
    has E[ηηᵀ] = C. Negative eigenvalues of Re C get imaginary scales and
    eigenvalues of Im C get the rotated scale sqrt(i·β); the covariance
    E[ηη*] is whatever this construction implies (a free parameter).
    """
    c = np.asarray(kernel, dtype=complex)
    scale = max(1.0, np.abs(c).max())
    if np.abs(c - c.T).max() > KERNEL_SYMMETRY_TOL * scale:
        raise InvalidParameterError("relation kernel must be symmetric")
    wa, va = np.linalg.eigh(0.5 * (c.real + c.real.T))
    wb, vb = np.linalg.eigh(0.5 * (c.imag + c.imag.T))
    sa = np.where(wa >= 0, np.sqrt(np.abs(wa)).astype(complex), 1j * np.sqrt(np.abs(wa)))
    sb = np.sqrt(1j * wb.astype(complex))
    return va, sa, vb, sb


def sample_relation_fields(kernel_factor, n_samples: int, seed: int,
                           stream_index: int = 0) -> np.ndarray:
    """Sample fields with the prescribed relation kernel (from relation_factor)."""
    va, sa, vb, sb = kernel_factor
    rng = stream(seed, stream_index)
    n = va.shape[0]
    g = rng.standard_normal((n_samples, n))
    h = rng.standard_normal((n_samples, n))
    return (g * sa) @ va.T + (h * sb) @ vb.T


def characteristic_check(pair: KernelPair, a: np.ndarray, b: np.ndarray,
                         n_samples: int, seed: int = 0):
    """Monte-Carlo vs closed-form generalized characteristic function.

    Empirical side: E[exp(−i Σ (ξ a − b ξ*))]. Analytic side:
    exp[Σ Γ a b − (S aa + S* bb)/2]. Returns (empirical, analytic, se).
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    factor = factor_kernel(pair)
    xi = sample_fields(factor, n_samples, seed)
    phase = np.exp(-1j * (xi @ a - xi.conj() @ b))
    empirical = complex(phase.mean())
    se = float(np.sqrt((np.abs(phase - empirical) ** 2).mean() / n_samples))
    g, s = pair.gamma, pair.relation
    analytic = complex(np.exp(a @ g @ b - 0.5 * (a @ s @ a + b @ s.conj() @ b)))
    return empirical, analytic, se


@dataclass
class PsdReport:
    min_quadratic_form: float
    min_eigenvalue: float
    trials: int


def verify_psd(kernel: np.ndarray, trials: int, seed: int = 0) -> PsdReport:
    """Probe (f|D|f) with random complex test functions and report minima.

    Negative values are data, not failure: regulated kernels may violate
    positivity and callers decide what to clip.
    """
    d = np.asarray(kernel, dtype=complex)
    scale = max(1.0, np.abs(d).max())
    if np.abs(d - d.conj().T).max() > KERNEL_SYMMETRY_TOL * scale:
        raise InvalidParameterError("verify_psd expects a Hermitian kernel")
    rng = stream(seed)
    n = d.shape[0]
    min_q = np.inf
    for _ in range(trials):
        f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        q = float(np.real(f.conj() @ d @ f))
        min_q = min(min_q, q)
    min_eig = float(np.linalg.eigvalsh(0.5 * (d + d.conj().T)).min())
    return PsdReport(min_quadratic_form=min_q, min_eigenvalue=min_eig, trials=trials)


@dataclass
class ReweightedEnsemble:
    """Field samples with log-space weights; expectations are self-normalized.

    Weights are kept as logs because tilted measures spread them over many
    orders of magnitude; `weights` exposes the max-shifted relative weights,
    which leave every self-normalized expectation unchanged.
    """

    samples: np.ndarray              # (n, points)
    log_weights: np.ndarray          # (n,)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_weights.max())

    def expectation(self, fn) -> complex:
        vals = np.array([fn(s) for s in self.samples])
        w = self.weights
        return complex((vals * w).sum() / w.sum())


def quartic_log_weights(samples: np.ndarray, spec: QuarticReweightSpec,
                        volume_element: float = 1.0) -> np.ndarray:
    """log w = Σ_x vol·(2λ·Im ξ⁴ − ε|ξ|⁶), vectorized over samples."""
    xi = np.atleast_2d(np.asarray(samples, dtype=complex))
    tilt = 2.0 * spec.strength * np.imag(xi ** 4)
    cut = spec.epsilon * np.abs(xi) ** 6
    return volume_element * (tilt - cut).sum(axis=1)


def reweight_quartic(samples, spec: QuarticReweightSpec,
                     volume_element: float = 1.0) -> ReweightedEnsemble:
    """Attach the quartic-tilt weights to an ensemble of field samples."""
    arr = np.asarray([s.values if isinstance(s, FieldSample) else s for s in samples],
                     dtype=complex)
    logw = quartic_log_weights(arr, spec, volume_element)
    if not np.all(np.isfinite(logw)):
        raise NumericFailureError("non-finite quartic weight")
    return ReweightedEnsemble(samples=arr, log_weights=logw)


def quartic_weight_bound(spec: QuarticReweightSpec, n_points: int,
                         volume_element: float = 1.0) -> float:
    """Calculus bound: per site, 2λu² − εu³ ≤ 32λ³/27ε² for u = |ξ|² ≥ 0."""
    if spec.strength <= 0.0:
        return 1.0
    per_site = 32.0 * spec.strength ** 3 / (27.0 * spec.epsilon ** 2)
    return float(np.exp(n_points * volume_element * per_site))


_MAGIC = b"CGF1"


def save_field_samples(path, samples: np.ndarray, meta: dict = None):
    """Flat binary layout: magic, ndim, dims (LE uint64), interleaved re/im
    float64 LE; metadata (seed, kernel hash, ...) goes to a JSON sidecar."""
    arr = np.ascontiguousarray(np.atleast_2d(np.asarray(samples, dtype=complex)))
    path = str(path)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<Q", d))
        inter = np.empty(arr.shape + (2,), dtype="<f8")
        inter[..., 0] = arr.real
        inter[..., 1] = arr.imag
        f.write(inter.tobytes())
    with open(path + ".json", "w") as f:
        json.dump(meta or {}, f, indent=2, sort_keys=True)


def load_field_samples(path):
    """Inverse of save_field_samples; returns (samples, metadata)."""
    path = str(path)
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise InvalidParameterError(f"{path}: not a field-sample file")
        (ndim,) = struct.unpack("<Q", f.read(8))
        shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
        inter = np.frombuffer(f.read(), dtype="<f8").reshape(shape + (2,))
    samples = inter[..., 0] + 1j * inter[..., 1]
    try:
        with open(path + ".json") as f:
            meta = json.load(f)
    except FileNotFoundError:
        meta = {}
    return samples, meta
