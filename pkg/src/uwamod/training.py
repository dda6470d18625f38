"""
Siamese training loop, Adam, final modulation extraction and checkpoints.

Each epoch shuffles the training set, cuts it into disjoint channel pairs
and splits the pairs into ``batches`` groups of ``n_sample``.  Gradients of
all pairs in a group are summed (in a fixed chunk order, so thread count
never changes the result) and applied in a single Adam step.
"""
import csv
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import substream
from .errors import ConfigError, FormatError, VersionError
from .network import NetworkWeights, features, forward_features, init_weights, pair_loss_and_gradient
from .numerics import householder_qr
from .objective import PROFILE_VARIANTS, core_inverse, fairness_from_diagonal, mse_diagonal

log = logging.getLogger(__name__)

_SHUFFLE_STREAM = 3
_INIT_STREAM = 4
# pairs per gradient chunk; fixed so the reduction order never depends on --jobs
GRAD_CHUNK = 50
# precompute features and core inverses when they fit in this many bytes
CACHE_LIMIT_BYTES = 2 << 30

LOG_COLUMNS = ["epoch", "batch", "train_loss", "f_term", "q_term", "test_loss", "wall_seconds"]


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    ``n_sample=None`` means ``M_train // (2 * batches)``.  ``train_sigma2``
    defaults to 15 dB SNR.  Training stops once the test loss has not
    improved by a relative ``rel_threshold`` for ``patience`` epochs.
    """

    epochs: int = 2500
    batches: int = 50
    n_sample: int | None = None
    lam: float = 0.005
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    train_sigma2: float = 10 ** (-1.5)
    seed: int = 0
    patience: int = 50
    rel_threshold: float = 1e-4
    profile_variant: str = "equal"
    log_wall_time: bool = False

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batches < 1:
            problems.append("batches must be >= 1")
        if self.n_sample is not None and self.n_sample < 1:
            problems.append("n_sample must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            problems.append("lam must lie in [0, 1]")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            problems.append("Adam betas must lie in [0, 1)")
        if not self.adam_epsilon > 0:
            problems.append("adam_epsilon must be > 0")
        if not self.train_sigma2 > 0:
            problems.append("train_sigma2 must be > 0")
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.rel_threshold < 0:
            problems.append("rel_threshold must be >= 0")
        if self.profile_variant not in PROFILE_VARIANTS:
            problems.append(f"profile_variant must be one of {PROFILE_VARIANTS}")
        if problems:
            raise ConfigError("invalid TrainConfig: " + "; ".join(problems))

    def samples_per_batch(self, m_train):
        return self.n_sample if self.n_sample is not None else m_train // (2 * self.batches)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    f_term: float
    q_term: float
    test_loss: float
    test_fairness: float
    consistency: float


@dataclass
class TrainState:
    weights: NetworkWeights
    m: list
    v: list
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    stopped_early: bool = False


def init_state(N, N_g, seed):
    w = init_weights(N, N_g, substream(seed, 0, stream=_INIT_STREAM))
    return TrainState(w, [np.zeros_like(p) for p in w.params], [np.zeros_like(p) for p in w.params])


def adam_step(state, grads, cfg):
    """One bias-corrected Adam update; returns a new :class:`TrainState`."""
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingAborted(f"non-finite gradient at step {state.step + 1}")
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_epsilon
    t = state.step + 1
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    params = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
              for p, mi, vi in zip(state.weights.params, m, v)]
    w = NetworkWeights(params, state.weights.N, state.weights.N_g)
    return replace(state, weights=w, m=m, v=v, step=t)


class ChannelBank:
    """Network inputs and core inverses for a dataset at a fixed noise level."""

    def __init__(self, dataset, sigma2):
        self.dataset = dataset
        self.sigma2 = sigma2
        cfg = dataset.config
        per_item = 8 * 2 * cfg.M * cfg.N + 16 * cfg.N * cfg.N
        self._x = self._minv = None
        if per_item * len(dataset) <= CACHE_LIMIT_BYTES:
            self._x, self._minv = self._compute(np.arange(len(dataset)))

    def _compute(self, idx):
        h = self.dataset.matrices(idx)
        return features(h), core_inverse(h, self.sigma2)

    def get(self, idx):
        idx = np.asarray(idx)
        if self._x is not None:
            return self._x[idx], self._minv[idx]
        return self._compute(idx)

    def __len__(self):
        return len(self.dataset)


def _batch_gradient(theta, bank, pairs, cfg, pool):
    chunks = [pairs[i:i + GRAD_CHUNK] for i in range(0, len(pairs), GRAD_CHUNK)]

    def work(chunk):
        x1, m1 = bank.get(chunk[:, 0])
        x2, m2 = bank.get(chunk[:, 1])
        return pair_loss_and_gradient(theta, x1, x2, m1, m2, bank.sigma2, cfg.lam, cfg.profile_variant)

    results = list(pool.map(work, chunks)) if pool is not None else [work(c) for c in chunks]
    grads = [np.zeros_like(p) for p in theta.params]
    loss = f_term = q_term = 0.0
    for res, g in results:
        loss += res.loss
        f_term += res.f_term
        q_term += res.q_term
        for acc, gi in zip(grads, g):
            acc += gi
    n = len(pairs)
    return grads, loss / n, f_term / n, q_term / n


def network_outputs(theta, bank, chunk=256):
    """Network modulation matrices for every channel in ``bank``."""
    out = []
    for i in range(0, len(bank), chunk):
        x, _ = bank.get(np.arange(i, min(i + chunk, len(bank))))
        q, _ = forward_features(theta, x)
        out.append(q)
    return np.concatenate(out, axis=0)


def evaluate(theta, bank, cfg):
    """Test-set diagnostics.

    Returns ``(test_loss, mean fairness of the per-channel outputs,
    consistency)`` where the loss pairs consecutive channels ``(0, 1),
    (2, 3), ...`` and consistency is ``mean_m q(F_m, F)`` for the averaged
    and re-orthogonalized ``F``.
    """
    fm = network_outputs(theta, bank)
    _, minv = bank.get(np.arange(len(bank)))
    e = mse_diagonal(minv, fm, bank.sigma2)
    f = fairness_from_diagonal(e, cfg.profile_variant)
    n = theta.N
    if len(fm) >= 2:
        k = len(fm) // 2 * 2
        q = np.sum(np.abs(fm[0:k:2] - fm[1:k:2]) ** 2, axis=(-2, -1)) / n
        loss = float(np.mean(0.5 * cfg.lam * (f[0:k:2] + f[1:k:2]) + (1 - cfg.lam) * q))
    else:
        loss = float(0.5 * cfg.lam * 2 * f[0])
    try:
        final, _ = householder_qr(fm.mean(axis=0))
        consistency = float(np.mean(np.sum(np.abs(fm - final) ** 2, axis=(-2, -1)) / n))
    except ArithmeticError:
        consistency = float("nan")
    return loss, float(np.mean(f)), consistency


def _fmt(x):
    return "" if x is None else repr(float(x))


def train(train_set, test_set, cfg, state=None, log_path=None, jobs=1):
    """Run the Siamese optimization; resumes when ``state`` is given.

    Per-batch rows go to ``log_path`` (CSV, appended on resume) when given.
    """
    if len(train_set) < 2 or len(test_set) < 1:
        raise ConfigError("training needs >= 2 training and >= 1 test channels")
    if train_set.config != test_set.config:
        raise ConfigError("training and test datasets use different configurations")
    sys_cfg = train_set.config
    ns = cfg.samples_per_batch(len(train_set))
    if ns < 1 or 2 * cfg.batches * ns > len(train_set):
        raise ConfigError(
            f"2 * batches * n_sample = {2 * cfg.batches * max(ns, 0)} exceeds "
            f"the training set size {len(train_set)}"
        )
    if state is None:
        state = init_state(sys_cfg.N, sys_cfg.N_g, cfg.seed)
    elif (state.weights.N, state.weights.N_g) != (sys_cfg.N, sys_cfg.N_g):
        raise ConfigError("checkpoint dimensions do not match the dataset")

    train_bank = ChannelBank(train_set, cfg.train_sigma2)
    test_bank = ChannelBank(test_set, cfg.train_sigma2)

    writer = fh = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = state.epoch == 0 or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(LOG_COLUMNS)

    pool = ThreadPoolExecutor(max_workers=jobs) if jobs and jobs > 1 else None
    t0 = time.perf_counter()
    best = min((r.test_loss for r in state.history), default=np.inf)
    wait = _stale_epochs(state.history, cfg.rel_threshold)
    try:
        while state.epoch < cfg.epochs:
            epoch = state.epoch + 1
            perm = substream(cfg.seed, epoch, stream=_SHUFFLE_STREAM).permutation(len(train_set))
            pairs = perm[: 2 * cfg.batches * ns].reshape(cfg.batches, ns, 2)
            sums = np.zeros(3)
            for b in range(cfg.batches):
                grads, loss, f_term, q_term = _batch_gradient(state.weights, train_bank, pairs[b], cfg, pool)
                state = adam_step(state, grads, cfg)
                sums += (loss, f_term, q_term)
                test_loss = None
                if b == cfg.batches - 1:
                    test_loss, test_f, consistency = evaluate(state.weights, test_bank, cfg)
                if writer is not None:
                    wall = time.perf_counter() - t0 if cfg.log_wall_time else None
                    writer.writerow([epoch, b + 1, _fmt(loss), _fmt(f_term), _fmt(q_term),
                                     _fmt(test_loss), _fmt(wall)])
            sums /= cfg.batches
            rec = EpochRecord(epoch, *sums, test_loss, test_f, consistency)
            state.history.append(rec)
            state.epoch = epoch
            if fh is not None:
                fh.flush()
            log.info("epoch %d loss %.6g test %.6g f %.4g consistency %.3g",
                     epoch, rec.train_loss, test_loss, test_f, consistency)
            if test_loss < best * (1 - cfg.rel_threshold):
                best = test_loss
                wait = 0
            else:
                wait += 1
                if wait >= cfg.patience:
                    state.stopped_early = True
                    break
    finally:
        if pool is not None:
            pool.shutdown()
        if fh is not None:
            fh.close()
    return state


def _stale_epochs(history, rel_threshold):
    best, wait = np.inf, 0
    for r in history:
        if r.test_loss < best * (1 - rel_threshold):
            best, wait = r.test_loss, 0
        else:
            wait += 1
    return wait


def finalize_modulation(state, test_set, sigma2=None):
    """Average the network outputs over ``test_set`` and re-orthogonalize.

    Returns ``(F, consistency)`` with consistency ``mean_m q(F_m, F)``.
    """
    s2 = sigma2 if sigma2 is not None else 1.0
    bank = ChannelBank(test_set, s2)
    fm = network_outputs(state.weights, bank)
    return finalize_from_outputs(fm)


def finalize_from_outputs(fm):
    fm = np.asarray(fm, dtype=np.complex128)
    f, _ = householder_qr(fm.mean(axis=0))
    n = f.shape[-1]
    consistency = float(np.mean(np.sum(np.abs(fm - f) ** 2, axis=(-2, -1)) / n))
    return f, consistency


# ---------------------------------------------------------------- checkpoint
#
# little endian:
#   "UWAT" | version u32 | N u32 | N_g u32
#   epochs u32 | batches u32 | n_sample u32 (0 = derived) | lam f64 | lr f64
#   | beta1 f64 | beta2 f64 | eps f64 | train_sigma2 f64 | seed u64
#   | patience u32 | rel_threshold f64 | profile_variant u32 | log_wall_time u32
#   step u64 | epoch u32 | stopped_early u32
#   weights (8 arrays, layer order), Adam m (8), Adam v (8): float64
#   history count u32, then per epoch: epoch f64 + 6 f64 fields

CKPT_MAGIC = b"UWAT"
CKPT_VERSION = 1
_CK_HEAD = struct.Struct("<4sIII")
_CK_CFG = struct.Struct("<IIIddddddQIdII")
_CK_STEP = struct.Struct("<QII")
_CK_COUNT = struct.Struct("<I")
_CK_REC = struct.Struct("<7d")


def checkpoint_to_bytes(state, cfg):
    w = state.weights
    parts = [
        _CK_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, w.N, w.N_g),
        _CK_CFG.pack(
            cfg.epochs, cfg.batches, cfg.n_sample or 0, cfg.lam, cfg.learning_rate,
            cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.train_sigma2, cfg.seed,
            cfg.patience, cfg.rel_threshold, PROFILE_VARIANTS.index(cfg.profile_variant),
            int(cfg.log_wall_time),
        ),
        _CK_STEP.pack(state.step, state.epoch, int(state.stopped_early)),
    ]
    for group in (w.params, state.m, state.v):
        parts.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in group)
    parts.append(_CK_COUNT.pack(len(state.history)))
    for r in state.history:
        parts.append(_CK_REC.pack(r.epoch, r.train_loss, r.f_term, r.q_term,
                                  r.test_loss, r.test_fairness, r.consistency))
    return b"".join(parts)


def checkpoint_from_bytes(buf):
    try:
        magic, version, N, N_g = _CK_HEAD.unpack_from(buf, 0)
    except struct.error as exc:
        raise FormatError("truncated checkpoint header", 0) from exc
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", 0)
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}", 4)
    off = _CK_HEAD.size
    try:
        vals = _CK_CFG.unpack_from(buf, off)
        off += _CK_CFG.size
        step, epoch, stopped = _CK_STEP.unpack_from(buf, off)
        off += _CK_STEP.size
    except struct.error as exc:
        raise FormatError("truncated checkpoint configuration", off) from exc
    (epochs, batches, ns, lam, lr, b1, b2, eps, s2, seed, patience, rel, variant, wall) = vals
    if variant >= len(PROFILE_VARIANTS):
        raise FormatError(f"unknown profile variant code {variant}", off - _CK_STEP.size - 8)
    cfg = TrainConfig(
        epochs=epochs, batches=batches, n_sample=ns or None, lam=lam, learning_rate=lr,
        adam_beta1=b1, adam_beta2=b2, adam_epsilon=eps, train_sigma2=s2, seed=seed,
        patience=patience, rel_threshold=rel, profile_variant=PROFILE_VARIANTS[variant],
        log_wall_time=bool(wall),
    )
    template = init_weights(N, N_g, np.random.default_rng(0)).params
    groups = []
    for _ in range(3):
        arrays = []
        for t in template:
            nbytes = t.size * 8
            if off + nbytes > len(buf):
                raise FormatError("truncated checkpoint arrays", off)
            arrays.append(np.frombuffer(buf, dtype="<f8", count=t.size, offset=off)
                          .reshape(t.shape).astype(np.float64))
            off += nbytes
        groups.append(arrays)
    try:
        (count,) = _CK_COUNT.unpack_from(buf, off)
        off += _CK_COUNT.size
        history = []
        for _ in range(count):
            vals = _CK_REC.unpack_from(buf, off)
            history.append(EpochRecord(int(vals[0]), *vals[1:]))
            off += _CK_REC.size
    except struct.error as exc:
        raise FormatError("truncated checkpoint history", off) from exc
    if off != len(buf):
        raise FormatError("trailing bytes after checkpoint", off)
    try:
        weights = NetworkWeights(groups[0], N, N_g)
    except ValueError as exc:
        raise FormatError(f"invalid checkpoint weights: {exc}", _CK_HEAD.size) from exc
    state = TrainState(weights, groups[1], groups[2], step, epoch, history, bool(stopped))
    return state, cfg


def save_checkpoint(state, cfg, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_to_bytes(state, cfg))
    tmp.replace(path)


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())
