"""Closed-form 3x3 tensor kernels used throughout the energy assembly.

All routines accept arrays of shape (..., 3, 3) and broadcast over the
leading axes.  Cofactor and determinant are written out from 2x2 minors
rather than routed through LU factorizations: the point is that the same
algebra that appears in the stored-energy density (minors as independent
arguments) is evaluated verbatim, and the directional-derivative maps stay
exact for polynomial identities.

Conventions: cof F = det(F) F^{-T} for invertible F, so cof of a diagonal
matrix diag(a, b, c) is diag(bc, ac, ab) with no sign surprises.
"""

import numpy as np

from .errors import NonPositiveDeterminant, SingularMatrix

SINGULAR_TOL = 1e-12


def determinant(F):
    """det F via the 3x3 cofactor expansion, shape (...)."""
    F = np.asarray(F)
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def cofactor(F):
    """Cofactor matrix (matrix of signed 2x2 minors), shape (..., 3, 3).

    Built entry by entry; never divides, so it is fine on singular input.
    """
    F = np.asarray(F)
    c = np.empty(np.broadcast_shapes(F.shape), dtype=np.result_type(F, float))
    a00, a01, a02 = F[..., 0, 0], F[..., 0, 1], F[..., 0, 2]
    a10, a11, a12 = F[..., 1, 0], F[..., 1, 1], F[..., 1, 2]
    a20, a21, a22 = F[..., 2, 0], F[..., 2, 1], F[..., 2, 2]
    c[..., 0, 0] = a11 * a22 - a12 * a21
    c[..., 0, 1] = a12 * a20 - a10 * a22
    c[..., 0, 2] = a10 * a21 - a11 * a20
    c[..., 1, 0] = a02 * a21 - a01 * a22
    c[..., 1, 1] = a00 * a22 - a02 * a20
    c[..., 1, 2] = a01 * a20 - a00 * a21
    c[..., 2, 0] = a01 * a12 - a02 * a11
    c[..., 2, 1] = a02 * a10 - a00 * a12
    c[..., 2, 2] = a00 * a11 - a01 * a10
    return c


def cramer_inverse(F):
    """Inverse by Cramer's rule, cof(F)^T / det F.

    Raises SingularMatrix if any |det| < 1e-12; for the near-identity
    gradients this code meets, that threshold is far below anything legal.
    """
    F = np.asarray(F)
    d = determinant(F)
    if np.any(np.abs(d) < SINGULAR_TOL):
        raise SingularMatrix(f"minimum |det| = {np.min(np.abs(d)):.3e}")
    return np.swapaxes(cofactor(F), -1, -2) / d[..., None, None]


def frobenius_norm(A):
    """Frobenius norm over the trailing matrix (or higher-order) axes.

    `A` may be (..., 3, 3) or (..., 3, 3, 3); pass `order` axes explicitly
    through `axis` if the default (last two) is wrong.
    """
    A = np.asarray(A)
    return np.sqrt(np.sum(A * A, axis=(-2, -1)))


def right_cauchy_green(F):
    """C = F^T F, shape (..., 3, 3)."""
    F = np.asarray(F)
    return np.swapaxes(F, -1, -2) @ F


def determinant_derivative(F, H):
    """Directional derivative of det at F in direction H: <cof F, H>."""
    return np.sum(cofactor(F) * np.asarray(H), axis=(-2, -1))


def cofactor_derivative(F, H):
    """Directional derivative of the cofactor map at F in direction H.

    cof is quadratic in its argument, so the derivative is exactly the
    polarization cof(F+H) - cof(F) - cof(H).  The same formula is its own
    adjoint: <cofactor_derivative(F, H), K> == <H, cofactor_derivative(F, K)>.
    """
    F = np.asarray(F)
    H = np.asarray(H)
    return cofactor(F + H) - cofactor(F) - cofactor(H)


def polar_decompose(F):
    """Rotation/stretch split F = R U with U = sqrt(F^T F) SPD.

    Uses the eigendecomposition of C = F^T F; requires det F > 0 so that
    R = F U^{-1} lands in SO(3).  Returns (R, U).
    """
    F = np.asarray(F)
    d = determinant(F)
    if np.any(d <= 0.0):
        raise NonPositiveDeterminant(f"minimum det = {np.min(d):.3e}")
    C = right_cauchy_green(F)
    evals, evecs = np.linalg.eigh(C)
    sq = np.sqrt(evals)
    U = np.einsum("...ik,...k,...jk->...ij", evecs, sq, evecs)
    Uinv = np.einsum("...ik,...k,...jk->...ij", evecs, 1.0 / sq, evecs)
    return F @ Uinv, U
