"""
Transmit/receive chain: QPSK mapping, unitary modulation, AWGN, LMMSE.

The zero-padding guard is implicit in the ``(N + N_g) x N`` channel matrix,
so ``s = F x`` carries no explicit trailing zeros.  SNR is ``1 / sigma^2``
because channel power is normalized to one on average.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .channel import build_channel_matrices, substream
from .numerics import hermitian_solve, unitarity_residual

UNITARY_TOL = 1e-9
_BER_STREAM = 2


class NotUnitaryError(ValueError):
    pass


def as_modulation(f, tol=UNITARY_TOL):
    """Return ``f`` as a complex square array, rejecting non-unitary input."""
    f = np.asarray(f, dtype=np.complex128)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError(f"modulation matrix must be square, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise NotUnitaryError("modulation matrix contains non-finite entries")
    res = unitarity_residual(f)
    if not res < tol:
        raise NotUnitaryError(f"modulation matrix fails unitarity: ||F^H F - I||_F = {res:.3e}")
    return f


def dft_matrix(N):
    """Unitary DFT, entries ``exp(-j 2 pi n k / N) / sqrt(N)`` (OFDM)."""
    if N < 2:
        raise ValueError("N must be >= 2")
    n = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(n, n) / N) / np.sqrt(N)


def identity_matrix(N):
    """Single-carrier modulation."""
    if N < 2:
        raise ValueError("N must be >= 2")
    return np.eye(N, dtype=np.complex128)


def qpsk_map(bits):
    """Gray QPSK: ``(b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)``.

    ``bits`` has a trailing axis of even length ``2N``; leading axes are kept.
    """
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise ValueError("bit count must be even")
    b = bits.reshape(bits.shape[:-1] + (-1, 2)).astype(np.float64)
    return ((1.0 - 2.0 * b[..., 0]) + 1j * (1.0 - 2.0 * b[..., 1])) / np.sqrt(2.0)


def qpsk_demap(xhat):
    """Hard decision by the signs of the real and imaginary parts."""
    xhat = np.asarray(xhat)
    b = np.stack([xhat.real < 0, xhat.imag < 0], axis=-1).astype(np.uint8)
    return b.reshape(xhat.shape[:-1] + (-1,))


def modulate(f, x):
    """``s = F x``; ``x`` may carry a leading batch axis."""
    f = np.asarray(f)
    x = np.asarray(x)
    if x.shape[-1] != f.shape[1]:
        raise ValueError(f"dimension mismatch: F is {f.shape}, x has length {x.shape[-1]}")
    return x @ f.T


def complex_normal(rng, shape):
    """Unit-variance circular complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def add_awgn(v, sigma2, rng):
    """Add ``CN(0, sigma2)`` noise to every entry of ``v``."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    v = np.asarray(v, dtype=np.complex128)
    if sigma2 == 0:
        return v.copy()
    return v + np.sqrt(sigma2) * complex_normal(rng, v.shape)


def lmmse_matrix(he, sigma2):
    """Equalizer ``W = (He^H He + sigma2 I)^{-1} He^H`` (shape ``N x M``)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0 for LMMSE")
    he = np.asarray(he, dtype=np.complex128)
    heh = np.conj(np.swapaxes(he, -1, -2))
    n = he.shape[-1]
    return hermitian_solve(heh @ he + sigma2 * np.eye(n), heh)


def lmmse_equalize(he, r, sigma2):
    """LMMSE estimate of the symbols from ``r = He x + w``.

    ``r`` is a length-``M`` vector or a stack ``(k, M)``.
    """
    r = np.asarray(r, dtype=np.complex128)
    w = lmmse_matrix(he, sigma2)
    return r @ w.T


def snr_db_to_sigma2(snr_db):
    return 10.0 ** (-np.asarray(snr_db, dtype=np.float64) / 10.0)


def _count_errors(he, sigma2_list, bits, noise):
    """Bit errors per noise level for a block of trials over one channel."""
    x = qpsk_map(bits)
    clean = x @ he.T
    errors = []
    for s2 in sigma2_list:
        w = lmmse_matrix(he, s2)
        xhat = (clean + np.sqrt(s2) * noise) @ w.T
        errors.append(int(np.count_nonzero(qpsk_demap(xhat) != bits)))
    return errors


def _draw_trials(rng, trials, N, M):
    bits = rng.integers(0, 2, size=(trials, 2 * N), dtype=np.uint8)
    noise = complex_normal(rng, (trials, M))
    return bits, noise


def ber_trial(f, paths, config, sigma2, rng):
    """One block: bits -> QPSK -> F -> channel -> AWGN -> LMMSE -> demap.

    Returns ``(bit_errors, bits)``.
    """
    h = build_channel_matrices(paths.as_array()[None], config)[0]
    bits, noise = _draw_trials(rng, 1, config.N, config.M)
    (err,) = _count_errors(h @ f, [sigma2], bits, noise)
    return err, bits.size


@dataclass
class BerPoint:
    snr_db: float
    trials: int
    bits: int
    bit_errors: int

    @property
    def ber(self):
        return self.bit_errors / self.bits if self.bits else float("nan")


def _sweep_one(args):
    f, path_array, config, sigma2_list, trials, seed, index = args
    h = build_channel_matrices(path_array[None], config)[0]
    rng = substream(seed, index, stream=_BER_STREAM)
    bits, noise = _draw_trials(rng, trials, config.N, config.M)
    return _count_errors(h @ f, sigma2_list, bits, noise)


def ber_sweep(f, dataset, snr_list_db, trials, seed=0, jobs=1):
    """Monte Carlo BER over every realization of ``dataset``.

    Realization ``i`` draws its bits and unit noise from one substream of
    ``seed``, shared by all SNR points and by every modulation matrix, so
    comparisons between matrices are paired.

    Returns a list of :class:`BerPoint`, one per SNR value.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    f = as_modulation(f)
    cfg = dataset.config
    if f.shape[0] != cfg.N:
        raise ValueError(f"F is {f.shape[0]}x{f.shape[0]} but the dataset has N = {cfg.N}")
    sigma2_list = [float(s) for s in snr_db_to_sigma2(snr_list_db)]
    tasks = [(f, dataset.paths[i], cfg, sigma2_list, trials, seed, i) for i in range(len(dataset))]
    if jobs and jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_real = list(pool.map(_sweep_one, tasks))
    else:
        per_real = [_sweep_one(t) for t in tasks]
    totals = np.sum(np.asarray(per_real, dtype=np.int64), axis=0)
    n_trials = trials * len(dataset)
    n_bits = n_trials * 2 * cfg.N
    return [
        BerPoint(float(snr), n_trials, n_bits, int(err))
        for snr, err in zip(snr_list_db, totals)
    ]


def write_ber_csv(points, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snr_db", "trials", "bits", "bit_errors", "ber"])
        for p in points:
            w.writerow([repr(p.snr_db), p.trials, p.bits, p.bit_errors, repr(p.ber)])
