"""Collapse-model dynamics on finite lattices.

Markovian (white-noise) collapse trajectories, non-Markovian unravelings
driven by complex Gaussian fields with Pauli-Villars-regularized kernels,
and the independent analytic/brute-force oracles used to verify them.
"""

from .errors import (CollapseMcError, ConfigError, DegenerateEnsembleError,
                     DegenerateTrajectoryError, FitError, IntegrationFailureError,
                     InvalidParameterError, NotPositiveSemidefiniteError,
                     NumericFailureError, QuadratureFailureError,
                     UnsupportedRegimeError)
from .hilbert import (CslParams, DensityMatrix, LatticeGrid, LatticeOperator,
                      QuantumState, build_mass_density, evolve_lindblad,
                      hopping_hamiltonian, mass_density_diagonals,
                      point_mass_ops, site_density_ops, trace_distance)
from .streams import stream

__version__ = "0.1.0"
