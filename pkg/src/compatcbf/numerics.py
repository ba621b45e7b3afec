"""Small batched linear-algebra helpers shared by the certification code."""

import numpy as np


def spectral_norm(A):
    """2-norm of a stack of matrices, shape (..., m, n) -> (...).

    Closed form for 2x2 via the largest eigenvalue of A^T A; SVD otherwise.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] == (2, 2):
        a, b = A[..., 0, 0], A[..., 0, 1]
        c, d = A[..., 1, 0], A[..., 1, 1]
        # eigenvalues of A^T A: (s +- sqrt(s^2 - 4 det^2)) / 2
        s = a * a + b * b + c * c + d * d
        det = a * d - b * c
        disc = np.sqrt(np.maximum(s * s - 4.0 * det * det, 0.0))
        return np.sqrt(0.5 * (s + disc))
    return np.linalg.svd(A, compute_uv=False)[..., 0]


def matvec(M, x):
    return np.matmul(M, np.asarray(x)[..., None])[..., 0]


def dot(x, y):
    return np.multiply(x, y).sum(axis=-1)


def quad_form(M, x, y=None):
    """x^T M y over the leading batch axes."""
    if y is None:
        y = x
    return dot(x, matvec(M, y))
