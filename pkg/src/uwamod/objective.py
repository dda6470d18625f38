"""
LMMSE error statistics and the losses built on them.

For a unitary modulation ``F`` the LMMSE error correlation is

    C = sigma^2 F^H (H^H H + sigma^2 I)^{-1} F

whose trace does not depend on ``F``.  Only the split of that fixed total
over the ``N`` symbols (the diagonal of ``C``) can be shaped, and the
fairness objective measures how far it is from an equal split.
"""
from dataclasses import dataclass

import numpy as np

from .numerics import hermitian_solve

PROFILE_VARIANTS = ("equal", "literal")


@dataclass(frozen=True)
class MseProfile:
    """Per-symbol mean squared errors and their sum."""

    e: np.ndarray
    total: float


def _values(p):
    return np.asarray(p.e if isinstance(p, MseProfile) else p, dtype=np.float64)


def core_inverse(h, sigma2):
    """``(H^H H + sigma2 I)^{-1}``; ``h`` may be a stack ``(K, M, N)``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    h = np.asarray(h, dtype=np.complex128)
    hh = np.conj(np.swapaxes(h, -1, -2))
    n = h.shape[-1]
    eye = np.eye(n, dtype=np.complex128)
    return hermitian_solve(hh @ h + sigma2 * eye, np.broadcast_to(eye, hh.shape[:-2] + (n, n)))


def error_correlation(h, f, sigma2, core_inv=None):
    """Error correlation ``C`` from the F-free core inverse.

    ``core_inv`` may be passed in when it is reused across several ``F``.
    """
    f = np.asarray(f, dtype=np.complex128)
    if core_inv is None:
        core_inv = core_inverse(h, sigma2)
    if f.shape[-2] != core_inv.shape[-1]:
        raise ValueError(f"dimension mismatch: F {f.shape} vs channel width {core_inv.shape[-1]}")
    return sigma2 * np.conj(np.swapaxes(f, -1, -2)) @ core_inv @ f


def mse_diagonal(core_inv, f, sigma2):
    """Diagonal of ``C`` without forming it: ``sigma2 Re(f_k^H Minv f_k)``."""
    mf = core_inv @ f
    return sigma2 * np.real(np.sum(np.conj(f) * mf, axis=-2))


def mse_profile(c):
    """Diagonal of ``C`` as an :class:`MseProfile`."""
    c = np.asarray(c, dtype=np.complex128)
    d = np.diagonal(c)
    scale = max(1.0, float(np.max(np.abs(d))))
    if np.max(np.abs(d.imag)) > 1e-12 * scale:
        raise ValueError("error correlation has a complex diagonal; input is not Hermitian")
    e = d.real.copy()
    if np.min(e) < -1e-12:
        raise ValueError("error correlation has a negative diagonal entry")
    return MseProfile(e, float(np.sum(e)))


def optimal_profile(c, variant="equal"):
    """Target profile for ``C``.

    ``"equal"`` splits ``trace(C)`` evenly, so the target keeps the invariant
    total.  ``"literal"`` returns ``1 / trace(C)`` per entry, kept for
    reproduction studies.
    """
    c = np.asarray(c)
    n = c.shape[-1]
    tr = float(np.real(np.trace(c)))
    return MseProfile(*_target_from_total(tr, n, variant))


def _target_from_total(total, n, variant):
    if variant == "equal":
        e = np.full(n, total / n)
    elif variant == "literal":
        e = np.full(n, 1.0 / total)
    else:
        raise ValueError(f"unknown profile variant {variant!r}")
    return e, float(np.sum(e))


def fairness_objective(e, e_opt):
    """Normalized squared distance ``||e - e_opt||^2 / ||e_opt||^2``."""
    e = _values(e)
    e_opt = _values(e_opt)
    if e.shape != e_opt.shape:
        raise ValueError("profiles must have equal length")
    den = float(np.sum(e_opt**2))
    if den == 0:
        raise ValueError("target profile has zero norm")
    return float(np.sum((e - e_opt) ** 2) / den)


def fairness_from_diagonal(e, variant="equal"):
    """Fairness objective with the target derived from ``e`` itself.

    Vectorized over leading axes.  Since ``sum(e) = trace(C)`` the target
    only needs the diagonal.
    """
    e = np.asarray(e, dtype=np.float64)
    n = e.shape[-1]
    total = e.sum(axis=-1, keepdims=True)
    if variant == "equal":
        target = np.broadcast_to(total / n, e.shape)
    elif variant == "literal":
        target = np.broadcast_to(1.0 / total, e.shape)
    else:
        raise ValueError(f"unknown profile variant {variant!r}")
    return np.sum((e - target) ** 2, axis=-1) / np.sum(target**2, axis=-1)


def fairness_grad(e, variant="equal"):
    """Gradient of :func:`fairness_from_diagonal` with respect to ``e``."""
    e = np.asarray(e, dtype=np.float64)
    n = e.shape[-1]
    total = e.sum(axis=-1, keepdims=True)
    if variant == "equal":
        o = np.broadcast_to(total / n, e.shape)
        do_dtotal = np.full_like(total, 1.0 / n)
    else:
        o = np.broadcast_to(1.0 / total, e.shape)
        do_dtotal = -1.0 / total**2
    d = e - o
    oo = np.sum(o**2, axis=-1, keepdims=True)
    dd = np.sum(d**2, axis=-1, keepdims=True)
    df_de = 2.0 * d / oo
    df_do = -2.0 * d / oo - 2.0 * dd * o / oo**2
    # every target entry depends on sum(e) only
    return df_de + np.sum(df_do, axis=-1, keepdims=True) * do_dtotal


def siamese_distance(f1, f2):
    """``||F1 - F2||_F^2 / N``; vectorized over leading axes."""
    f1 = np.asarray(f1)
    f2 = np.asarray(f2)
    if f1.shape != f2.shape:
        raise ValueError("matrices must have equal shape")
    n = f1.shape[-1]
    out = np.sum(np.abs(f1 - f2) ** 2, axis=(-2, -1)) / n
    return float(out) if np.ndim(out) == 0 else out


def siamese_loss(f1, f2, q, lam):
    """``(lam / 2)(f1 + f2) + (1 - lam) q``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return 0.5 * lam * (f1 + f2) + (1.0 - lam) * q


def trace_invariance_check(h, sigma2, f_list):
    """Largest relative deviation of ``trace(C)`` across ``f_list``."""
    core_inv = core_inverse(h, sigma2)
    traces = [float(np.real(np.trace(error_correlation(h, f, sigma2, core_inv)))) for f in f_list]
    t0 = traces[0]
    return max(abs(t - t0) / abs(t0) for t in traces)
