"""
Dense complex linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays of dtype ``complex128``.  Functions that
factorize accept a leading batch dimension (``(..., n, n)``) so the training
loop can push a whole batch of channel pairs through one call.
"""
import numpy as np

__all__ = [
    "LinAlgDegeneracyError",
    "as_complex_matrix",
    "matmul",
    "hermitian_solve",
    "householder_qr",
    "frob_norm",
    "unitarity_residual",
]

# |R_kk| below this (relative to ||A||_F, floor 1) counts as rank deficient
QR_PIVOT_TOL = 1e-13


class LinAlgDegeneracyError(ArithmeticError):
    """Raised when a factorization meets a zero/non-positive pivot."""


def as_complex_matrix(a, name="matrix"):
    """Validate and convert ``a`` to a finite 2-D complex128 array."""
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b):
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def hermitian_solve(m, b):
    """Solve ``M X = B`` for Hermitian positive definite ``M`` via Cholesky.

    Parameters
    ----------
    m : ndarray, shape (..., n, n)
        Hermitian positive definite system matrix.
    b : ndarray, shape (..., n, k)
        Right-hand sides.

    Returns
    -------
    ndarray, shape (..., n, k)

    Raises
    ------
    LinAlgDegeneracyError
        If the factorization hits a non-positive pivot.
    """
    m = np.asarray(m, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if m.shape[-1] != m.shape[-2] or m.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {m.shape} vs {b.shape}")
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise LinAlgDegeneracyError(
            "non-positive pivot in Cholesky factorization "
            "(noise variance <= 0 or corrupted input?)"
        ) from exc
    # two triangular solves; numpy has no batched triangular solver so use
    # solve on the factors, which is still O(n^3) but stable
    y = np.linalg.solve(low, b)
    return np.linalg.solve(np.conj(np.swapaxes(low, -1, -2)), y)


def householder_qr(a):
    """Householder QR with a positive real diagonal on ``R``.

    Works on a single square matrix or a batch ``(..., n, n)``.  Under the
    positive-diagonal convention the factorization is unique, so the map
    ``A -> Q`` is a smooth function away from rank deficiency.

    Returns
    -------
    q : ndarray
        Unitary factor.
    r : ndarray
        Upper triangular factor with ``diag(r) > 0`` (real).

    Raises
    ------
    LinAlgDegeneracyError
        If a diagonal pivot vanishes (rank-deficient input).
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"householder_qr expects square matrices, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("householder_qr input contains non-finite entries")
    n = a.shape[-1]
    batch = a.shape[:-2]
    r = a.reshape((-1, n, n)).copy()
    nb = r.shape[0]
    q = np.broadcast_to(np.eye(n, dtype=np.complex128), (nb, n, n)).copy()
    scale = np.maximum(np.linalg.norm(r, axis=(-2, -1)), 1.0)

    vs = []
    for k in range(n - 1):
        x = r[:, k:, k]
        normx = np.linalg.norm(x, axis=1)
        x0 = x[:, 0]
        mag0 = np.abs(x0)
        phase = np.where(mag0 > 0, x0 / np.where(mag0 > 0, mag0, 1.0), 1.0)
        v = x.copy()
        v[:, 0] += phase * normx
        vnorm = np.linalg.norm(v, axis=1)
        ok = vnorm > 0
        v = np.where(ok[:, None], v / np.where(ok, vnorm, 1.0)[:, None], 0.0)
        vs.append(v)
        # R[k:, k:] -= 2 v (v^H R[k:, k:])
        proj = np.einsum("bi,bij->bj", v.conj(), r[:, k:, k:])
        r[:, k:, k:] -= 2.0 * v[:, :, None] * proj[:, None, :]
    for k in range(n - 2, -1, -1):
        v = vs[k]
        proj = np.einsum("bi,bij->bj", v.conj(), q[:, k:, :])
        q[:, k:, :] -= 2.0 * v[:, :, None] * proj[:, None, :]

    diag = np.diagonal(r, axis1=-2, axis2=-1)
    mag = np.abs(diag)
    if np.any(mag <= QR_PIVOT_TOL * scale[:, None]):
        raise LinAlgDegeneracyError("rank-deficient matrix in QR factorization")
    # A = (Q D^H)(D R) with D = diag(conj(r_kk)/|r_kk|)
    d = np.conj(diag) / mag
    r = d[:, :, None] * r
    q = q * np.conj(d)[:, None, :]
    r = np.triu(r)
    idx = np.arange(n)
    r[:, idx, idx] = mag
    return q.reshape(batch + (n, n)), r.reshape(batch + (n, n))


def frob_norm(a):
    """Frobenius norm (sqrt of the sum of squared magnitudes)."""
    a = np.asarray(a)
    return float(np.sqrt(np.sum(np.abs(a) ** 2)))


def unitarity_residual(f):
    """``||F^H F - I||_F`` for one square matrix."""
    f = np.asarray(f, dtype=np.complex128)
    return frob_norm(f.conj().T @ f - np.eye(f.shape[-1]))
