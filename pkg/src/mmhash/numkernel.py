"""Dense linear-algebra substrate: validated float64 matrices/vectors,
matrix-vector products, and an SVD for small matrices.

Matrices are plain 2-d numpy arrays, vectors 1-d arrays. The helpers here
coerce to float64 and reject non-finite entries, so downstream modules can
assume clean inputs. The SVD is a one-sided Jacobi iteration, accurate for
the small cross-covariance matrices this package needs; it is deliberately
not tuned for large problems.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, DimensionMismatch, InvalidValue

__all__ = ["as_matrix", "as_vector", "matvec", "svd_small"]

# Rotations smaller than this (relative to the column norms) are skipped;
# loose enough to terminate, tight enough for 1e-10 orthonormality.
_JACOBI_TOL = 1e-14
_MAX_SWEEPS = 100


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-d array, rejecting bad shapes/values."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-d, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise InvalidValue(f"{name} contains non-finite entries")
    return a


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 1-d array."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-d, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise InvalidValue(f"{name} contains non-finite entries")
    return a


def matvec(m, v) -> np.ndarray:
    """Product M @ v with dimension checking."""
    a = as_matrix(m)
    b = as_vector(v)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(
            f"matvec: matrix is {a.shape[0]}x{a.shape[1]}, vector has length {b.shape[0]}"
        )
    return a @ b


def svd_small(m, max_sweeps: int = _MAX_SWEEPS):
    """Thin SVD of a small dense matrix via one-sided Jacobi rotations.

    Returns (U, s, V) with M = U @ diag(s) @ V.T, s non-negative and
    non-increasing, and U, V with orthonormal columns. k = min(rows, cols)
    columns are returned. Raises ConvergenceError if the rotation sweeps do
    not settle within `max_sweeps`.
    """
    a = as_matrix(m)
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise InvalidValue("svd_small requires a non-empty matrix")
    transposed = a.shape[0] < a.shape[1]
    work = (a.T if transposed else a).copy()
    n_cols = work.shape[1]
    v = np.eye(n_cols)

    for _ in range(max_sweeps):
        rotated = False
        for i in range(n_cols - 1):
            for j in range(i + 1, n_cols):
                ci = work[:, i]
                cj = work[:, j]
                aii = float(ci @ ci)
                ajj = float(cj @ cj)
                aij = float(ci @ cj)
                if abs(aij) <= _JACOBI_TOL * math.sqrt(aii * ajj):
                    continue
                rotated = True
                # Rotation angle that zeroes the (i, j) entry of the Gram matrix.
                tau = (ajj - aii) / (2.0 * aij)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = c * t
                gi = c * ci - s * cj
                gj = s * ci + c * cj
                work[:, i] = gi
                work[:, j] = gj
                vi = c * v[:, i] - s * v[:, j]
                vj = s * v[:, i] + c * v[:, j]
                v[:, i] = vi
                v[:, j] = vj
        if not rotated:
            break
    else:
        raise ConvergenceError(
            f"svd_small: Jacobi sweeps did not converge within {max_sweeps} iterations"
        )

    norms = np.sqrt((work * work).sum(axis=0))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    u = work[:, order]
    v = v[:, order]

    # Normalize non-null columns; rebuild an orthonormal basis for null ones.
    cutoff = s[0] * 1e-300 if s[0] > 0 else 0.0
    null_cols = []
    for k in range(n_cols):
        if s[k] > cutoff:
            u[:, k] /= s[k]
        else:
            s[k] = 0.0
            null_cols.append(k)
    if null_cols:
        _fill_orthonormal(u, null_cols)

    if transposed:
        u, v = v, u
    return u, s, v


def _fill_orthonormal(u: np.ndarray, null_cols) -> None:
    """Overwrite the listed columns with unit vectors orthogonal to the rest."""
    filled = [k for k in range(u.shape[1]) if k not in null_cols]
    basis = [u[:, k] for k in filled]
    dim = u.shape[0]
    next_axis = 0
    for k in null_cols:
        while True:
            if next_axis >= dim:
                raise InvalidValue("cannot complete orthonormal basis")
            cand = np.zeros(dim)
            cand[next_axis] = 1.0
            next_axis += 1
            for _ in range(2):  # re-orthogonalize once for full precision
                for b in basis:
                    cand -= (cand @ b) * b
            norm = float(np.linalg.norm(cand))
            if norm > 0.5:
                cand /= norm
                u[:, k] = cand
                basis.append(cand)
                break
