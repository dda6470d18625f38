"""
Fully connected network mapping a channel matrix to a unitary matrix.

Layout: the ``M x N`` complex channel is flattened to ``[Re(H).ravel(),
Im(H).ravel()]`` (length ``2 M N``), passed through three dense + GELU
layers of widths ``8N, 4N, 4N`` and a linear layer of width ``2 N^2``.  The
output is read as ``A = Re + j Im`` (row-major, real parts first) and the QR
factor ``Q`` of ``A`` is the modulation matrix.

Gradients are computed by hand.  Complex sensitivities use the convention
``G = dL/dRe(X) + j dL/dIm(X)`` for a real loss ``L`` and complex ``X``, so
that ``dL = Re(sum(conj(G) * dX))``.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .numerics import householder_qr
from .objective import fairness_from_diagonal, fairness_grad, mse_diagonal

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GELU ``x Phi(x)``."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    """``Phi(x) + x phi(x)``."""
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def layer_sizes(N, N_g):
    M = N + N_g
    return [2 * M * N, 8 * N, 4 * N, 4 * N, 2 * N * N]


@dataclass
class NetworkWeights:
    """Dense layer parameters ``[W1, b1, ..., W4, b4]``; ``W`` is ``(out, in)``."""

    params: list
    N: int
    N_g: int

    def __post_init__(self):
        sizes = layer_sizes(self.N, self.N_g)
        if len(self.params) != 2 * (len(sizes) - 1):
            raise ValueError("expected four weight/bias pairs")
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ValueError(f"layer {i + 1} has shapes {w.shape}, {b.shape}")
        if not all(np.all(np.isfinite(p)) for p in self.params):
            raise ValueError("network weights contain non-finite values")

    def copy(self):
        return NetworkWeights([p.copy() for p in self.params], self.N, self.N_g)

    @property
    def n_params(self):
        return sum(p.size for p in self.params)


def init_weights(N, N_g, rng):
    """Uniform init with bound ``sqrt(6 / (fan_in + fan_out))``; zero biases."""
    sizes = layer_sizes(N, N_g)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        params.append(np.zeros(fan_out))
    return NetworkWeights(params, N, N_g)


def features(h):
    """Real input vectors ``[Re(H).ravel(), Im(H).ravel()]`` for a stack of H."""
    h = np.asarray(h)
    lead = h.shape[:-2]
    flat = h.reshape(lead + (-1,))
    return np.concatenate([flat.real, flat.imag], axis=-1)


@dataclass
class Tape:
    x: np.ndarray
    pre: list
    post: list
    q: np.ndarray
    r: np.ndarray


def forward_features(theta, x):
    """Forward pass on real feature rows ``x`` of shape ``(batch, 2MN)``."""
    x = np.atleast_2d(x)
    if x.shape[-1] != theta.params[0].shape[1]:
        raise ValueError(
            f"input length {x.shape[-1]} does not match the network ({theta.params[0].shape[1]})"
        )
    pre, post = [], []
    a = x
    for i in range(3):
        z = a @ theta.params[2 * i].T + theta.params[2 * i + 1]
        a = gelu(z)
        pre.append(z)
        post.append(a)
    out = a @ theta.params[6].T + theta.params[7]
    n = theta.N
    amat = (out[:, : n * n] + 1j * out[:, n * n :]).reshape(-1, n, n)
    q, r = householder_qr(amat)
    return q, Tape(x, pre, post, q, r)


def forward(theta, h):
    """Modulation matrix for one channel (or a stack) plus the tape."""
    h = np.asarray(h, dtype=np.complex128)
    single = h.ndim == 2
    q, tape = forward_features(theta, features(h[None] if single else h))
    return (q[0] if single else q), tape


def qr_backward(g_q, q, r):
    """Pull ``dL/dQ`` back to ``dL/dA`` for ``A = QR`` (square, diag(R) > 0)."""
    p = np.conj(np.swapaxes(g_q, -1, -2)) @ q
    ph = np.conj(np.swapaxes(p, -1, -2))
    k = np.triu(p - ph, 1)
    idx = np.arange(p.shape[-1])
    k[..., idx, idx] = 1j * p[..., idx, idx].imag
    rhs = q @ np.conj(np.swapaxes(k, -1, -2))
    # G_A = rhs R^{-H}  <=>  R G_A^H = rhs^H
    gah = np.linalg.solve(r, np.conj(np.swapaxes(rhs, -1, -2)))
    return np.conj(np.swapaxes(gah, -1, -2))


def backward(theta, tape, g_q):
    """Parameter gradients (summed over the batch) from ``dL/dQ``."""
    n = theta.N
    g_a = qr_backward(g_q, tape.q, tape.r).reshape(-1, n * n)
    dz = np.concatenate([g_a.real, g_a.imag], axis=-1)
    grads = [None] * 8
    acts = [tape.x] + tape.post
    for i in range(3, -1, -1):
        grads[2 * i] = dz.T @ acts[i]
        grads[2 * i + 1] = dz.sum(axis=0)
        if i:
            dz = (dz @ theta.params[2 * i]) * gelu_grad(tape.pre[i - 1])
    return grads


@dataclass
class PairLoss:
    """Loss pieces for a block of channel pairs (sums over pairs)."""

    loss: float
    f_term: float
    q_term: float
    pairs: int


def pair_loss_and_gradient(theta, x1, x2, minv1, minv2, sigma2, lam, variant="equal"):
    """Siamese loss summed over pairs and its exact gradient.

    ``x1, x2`` are feature rows and ``minv1, minv2`` the matching core
    inverses ``(H^H H + sigma2 I)^{-1}``.  ``f_term`` is the summed mean
    fairness ``(f1 + f2) / 2`` and ``q_term`` the summed distance.
    """
    b = x1.shape[0]
    n = theta.N
    fq, tape = forward_features(theta, np.concatenate([x1, x2], axis=0))
    minv = np.concatenate([minv1, minv2], axis=0)
    mf = minv @ fq
    e = sigma2 * np.real(np.sum(np.conj(fq) * mf, axis=-2))
    f = fairness_from_diagonal(e, variant)
    diff = fq[:b] - fq[b:]
    q = np.sum(np.abs(diff) ** 2, axis=(-2, -1)) / n
    f_half = 0.5 * (f[:b] + f[b:])
    loss = lam * f_half + (1.0 - lam) * q

    df_de = fairness_grad(e, variant) * (0.5 * lam)
    g_f = 2.0 * sigma2 * mf * df_de[:, None, :]
    g_q = (2.0 * (1.0 - lam) / n) * diff
    g_f[:b] += g_q
    g_f[b:] -= g_q
    grads = backward(theta, tape, g_f)
    return PairLoss(float(loss.sum()), float(f_half.sum()), float(q.sum()), b), grads


def loss_and_gradient(theta, h1, h2, sigma2, lam, variant="equal"):
    """Siamese loss and gradient for channel matrices ``h1, h2``.

    Accepts single matrices or equal-length stacks; the loss and gradient
    are summed over pairs.
    """
    from .objective import core_inverse

    h1 = np.asarray(h1, dtype=np.complex128)
    h2 = np.asarray(h2, dtype=np.complex128)
    if h1.ndim == 2:
        h1, h2 = h1[None], h2[None]
    res, grads = pair_loss_and_gradient(
        theta, features(h1), features(h2),
        core_inverse(h1, sigma2), core_inverse(h2, sigma2), sigma2, lam, variant,
    )
    return res.loss, grads


def loss_only(theta, h1, h2, sigma2, lam, variant="equal"):
    """Siamese loss without the backward pass (for finite differences)."""
    from .objective import core_inverse

    h1 = np.asarray(h1, dtype=np.complex128)
    h2 = np.asarray(h2, dtype=np.complex128)
    if h1.ndim == 2:
        h1, h2 = h1[None], h2[None]
    f1, _ = forward(theta, h1)
    f2, _ = forward(theta, h2)
    e1 = mse_diagonal(core_inverse(h1, sigma2), f1, sigma2)
    e2 = mse_diagonal(core_inverse(h2, sigma2), f2, sigma2)
    fa = fairness_from_diagonal(e1, variant)
    fb = fairness_from_diagonal(e2, variant)
    q = np.sum(np.abs(f1 - f2) ** 2, axis=(-2, -1)) / theta.N
    return float(np.sum(0.5 * lam * (fa + fb) + (1.0 - lam) * q))
