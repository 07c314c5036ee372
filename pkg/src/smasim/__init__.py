"""Quasistatic evolution of multi-well shape-memory specimens.

The stored energy is a minimum over symmetry-related martensite wells plus
an austenite well, regularized by Lp penalties on the deformation gradient,
its cofactor and determinant, and on the *spatial gradients* of cofactor
and determinant (the minor fields).  Evolution is rate-independent: each
time increment minimizes stored + dissipated - external work, and every
accepted step carries numerical certificates (stability sampling, two-sided
energy estimates, orientation/injectivity checks).
"""

from .errors import (ConfigError, InfeasibleStart, NonPositiveDeterminant,
                     SingularMatrix, SmasimError, TraceError)

__all__ = [
    "ConfigError",
    "InfeasibleStart",
    "NonPositiveDeterminant",
    "SingularMatrix",
    "SmasimError",
    "TraceError",
]

__version__ = "0.1.0"
