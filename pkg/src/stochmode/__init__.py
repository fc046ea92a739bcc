"""Stochastic pseudomode simulation of open quantum systems.

Bath correlations are split into a classical part, reproduced by a Gaussian
field in the system Hamiltonian, and a quantum part, reproduced by damped
harmonic modes with complex parameters.
"""

from .qcore import DensityMatrix, HilbertLayout, Operator
from .dynamics import DriveSpec, Pseudomode, PseudomodeSet, SystemSpec, integrate
from .bath import (
    BrownianCritical,
    BrownianOverdamped,
    BrownianUnderdamped,
    OhmicExp,
    RationalGeneric,
    build_decomposition,
    correlation_numeric,
)
from .noise import NoiseModel, coeffs_analytic, coeffs_quadrature, sample_field
from .ensemble import EnsembleConfig, EnsembleResult, run_ensemble

__version__ = "0.1.0"
