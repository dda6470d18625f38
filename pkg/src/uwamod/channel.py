"""
Delay-scale (wideband Doppler) multipath channels for a zero-padded block.

A realization is a set of ``P`` paths ``(A_p, tau_p, a_p)``.  Sampling the
received baseband signal at period ``T`` gives the ``(N + N_g) x N`` matrix

    H[n, n'] = sum_p h_p exp(j 2 pi a_p f_c n T) g((1 + a_p) n T - tau_p - n' T)

with ``h_p = A_p exp(-j 2 pi f_c tau_p)`` and ``g`` a raised-cosine pulse.

Path statistics:

* ``tau_1 = 0``; inter-arrival gaps are exponential with mean
  ``mean_interarrival``.
* ``A_p`` is Rayleigh with mean power decaying by ``total_decay_db`` over the
  guard interval ``T_g = N_g T``; the per-realization power profile is scaled
  so ``sum_p E[A_p^2 | tau] = 1``, hence SNR = 1 / sigma^2.
* ``a_p = a_max cos(theta_p)``, ``theta_p ~ U[-pi, pi]``, ``a_max = v_max / c``.
"""
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, VersionError

KNOT = 1852.0 / 3600.0  # m/s

DELAY_POLICIES = ("extend", "reject")

#: Identifier of the pinned RNG construction, written into dataset headers.
#: 1 = numpy PCG64 seeded from SeedSequence(seed, spawn_key=(stream, index)).
RNG_ALGORITHM_ID = 1

# guard on |1 - (2 beta t / T)^2| below which the analytic limit is used
_RC_SINGULAR_GUARD = 1e-9
_MAX_REJECTIONS = 100_000


@dataclass(frozen=True)
class SystemConfig:
    """Physical-layer and channel-statistics parameters.

    Defaults follow the reference dataset parameters (12.5 kHz carrier,
    5 kHz bandwidth, N = 256, N_g = 64, 20 kn, 8 paths).
    """

    f_c: float = 12.5e3
    bandwidth: float = 5e3
    N: int = 256
    N_g: int = 64
    beta: float = 0.65
    P: int = 8
    v_max: float = 20 * KNOT
    c_sound: float = 1500.0
    mean_interarrival: float = 1e-3
    total_decay_db: float = 20.0
    delay_policy: str = "extend"

    def __post_init__(self):
        self.validate()

    @property
    def T(self):
        return 1.0 / self.bandwidth

    @property
    def T_g(self):
        return self.N_g * self.T

    @property
    def a_max(self):
        return self.v_max / self.c_sound

    @property
    def M(self):
        """Number of received samples per block."""
        return self.N + self.N_g

    def validate(self):
        problems = []
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            problems.append("bandwidth must be > 0 (T = 1/bandwidth)")
        if not np.isfinite(self.f_c) or self.f_c < 0:
            problems.append("f_c must be finite and >= 0")
        if int(self.N) != self.N or self.N < 2:
            problems.append("N must be an integer >= 2")
        if int(self.N_g) != self.N_g or self.N_g < 0:
            problems.append("N_g must be an integer >= 0")
        if not (0 < self.beta <= 1):
            problems.append("beta must lie in (0, 1]")
        if int(self.P) != self.P or self.P < 1:
            problems.append("P must be an integer >= 1")
        if not (self.c_sound > 0):
            problems.append("c_sound must be > 0")
        elif not (0 <= self.v_max / self.c_sound < 1):
            problems.append("a_max = v_max / c_sound must satisfy 0 <= a_max < 1")
        if not (self.mean_interarrival > 0):
            problems.append("mean_interarrival must be > 0")
        if not np.isfinite(self.total_decay_db):
            problems.append("total_decay_db must be finite")
        if self.delay_policy not in DELAY_POLICIES:
            problems.append(f"delay_policy must be one of {DELAY_POLICIES}")
        if problems:
            raise ConfigError("invalid SystemConfig: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SystemConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PathSet:
    """One channel realization: per-path amplitude, delay (s), Doppler scale."""

    amplitude: np.ndarray
    delay: np.ndarray
    scale: np.ndarray

    @property
    def P(self):
        return len(self.amplitude)

    def gains(self, f_c):
        """Equivalent complex path gains ``A_p exp(-j 2 pi f_c tau_p)``."""
        return self.amplitude * np.exp(-2j * np.pi * f_c * self.delay)

    def as_array(self):
        return np.stack([self.amplitude, self.delay, self.scale], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())

    def __eq__(self, other):
        if not isinstance(other, PathSet):
            return NotImplemented
        return np.array_equal(self.as_array(), other.as_array())

    __hash__ = None


def substream(seed, index, stream=0):
    """Independent generator for realization ``index`` of ``seed``.

    ``stream`` separates unrelated consumers (dataset draws, BER noise,
    pair shuffling) that share one user seed.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def raised_cosine(t, T, beta):
    """Raised-cosine impulse response, peak 1 at ``t = 0``.

    The removable singularities at ``t = +-T/(2 beta)`` are replaced by their
    limit ``(pi/4) sinc(1/(2 beta))``.  Accepts scalars or arrays.
    """
    x = np.asarray(t, dtype=np.float64) / T
    denom = 1.0 - (2.0 * beta * x) ** 2
    singular = np.abs(denom) < _RC_SINGULAR_GUARD
    safe = np.where(singular, 1.0, denom)
    g = np.sinc(x) * np.cos(np.pi * beta * x) / safe
    g = np.where(singular, (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta)), g)
    return g if g.ndim else float(g)


def _draw_once(config, rng):
    P = config.P
    gaps = rng.exponential(config.mean_interarrival, size=P - 1)
    delay = np.concatenate([[0.0], np.cumsum(gaps)])
    power_draw = rng.exponential(1.0, size=P)
    theta = rng.uniform(-np.pi, np.pi, size=P)
    # decay reference window; one sample when there is no guard
    t_ref = config.T_g if config.N_g > 0 else config.T
    profile = 10.0 ** (-(config.total_decay_db / 10.0) * delay / t_ref)
    profile /= profile.sum()
    amplitude = np.sqrt(profile * power_draw)
    scale = config.a_max * np.cos(theta)
    return PathSet(amplitude, delay, scale)


def sample_paths(config, rng):
    """Draw one :class:`PathSet` under ``config``.

    With ``delay_policy="reject"`` the whole set is redrawn until the last
    arrival falls inside the guard interval.
    """
    for _ in range(_MAX_REJECTIONS):
        paths = _draw_once(config, rng)
        if config.delay_policy != "reject" or paths.delay[-1] <= config.T_g:
            return paths
    raise ConfigError(
        "delay rejection did not terminate; the guard interval is too short "
        "for the requested path count and inter-arrival mean"
    )


def build_channel_matrix(paths, config):
    """Dense ``(N + N_g) x N`` channel matrix of one realization."""
    return build_channel_matrices(paths.as_array()[None], config)[0]


def build_channel_matrices(path_arrays, config):
    """Vectorized :func:`build_channel_matrix` over a stack ``(K, P, 3)``."""
    path_arrays = np.asarray(path_arrays, dtype=np.float64)
    T = config.T
    n = np.arange(config.M, dtype=np.float64)[:, None]
    n_prime = np.arange(config.N, dtype=np.float64)[None, :]
    out = np.zeros((path_arrays.shape[0], config.M, config.N), dtype=np.complex128)
    for k, arr in enumerate(path_arrays):
        for amp, tau, a in arr:
            h = amp * np.exp(-2j * np.pi * config.f_c * tau)
            doppler = np.exp(2j * np.pi * a * config.f_c * n * T)
            pulse = raised_cosine((1.0 + a) * n * T - tau - n_prime * T, T, config.beta)
            out[k] += h * doppler * pulse
    return out


class ChannelDataset:
    """A seeded collection of path realizations.

    Stores parameters only; channel matrices are rebuilt on demand.
    """

    def __init__(self, config, seed, paths):
        paths = np.asarray(paths, dtype=np.float64)
        if paths.ndim != 3 or paths.shape[1:] != (config.P, 3):
            raise ValueError(f"paths must have shape (count, {config.P}, 3), got {paths.shape}")
        self.config = config
        self.seed = int(seed)
        self.paths = paths

    def __len__(self):
        return self.paths.shape[0]

    def __getitem__(self, i):
        return PathSet.from_array(self.paths[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def matrices(self, indices=None):
        sel = self.paths if indices is None else self.paths[np.asarray(indices)]
        return build_channel_matrices(sel, self.config)

    def __eq__(self, other):
        if not isinstance(other, ChannelDataset):
            return NotImplemented
        return (
            self.config == other.config
            and self.seed == other.seed
            and np.array_equal(self.paths, other.paths)
        )

    __hash__ = None


def _generate_one(args):
    config, seed, index = args
    return sample_paths(config, substream(seed, index)).as_array()


def generate_dataset(config, seed, count, jobs=1):
    """Draw ``count`` realizations; realization ``i`` uses ``substream(seed, i)``.

    The result does not depend on ``jobs``.
    """
    if int(count) != count or count < 1:
        raise ConfigError("dataset count must be an integer >= 1")
    tasks = [(config, seed, i) for i in range(int(count))]
    if jobs and jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            arrays = list(pool.map(_generate_one, tasks, chunksize=64))
    else:
        arrays = [_generate_one(t) for t in tasks]
    return ChannelDataset(config, seed, np.stack(arrays))


# ---------------------------------------------------------------- file format
#
# little endian:
#   "UWAD" | version u32 | rng algorithm u32
#   f_c f64 | bandwidth f64 | N u32 | N_g u32 | beta f64 | P u32 | v_max f64
#   | c_sound f64 | mean_interarrival f64 | total_decay_db f64 | delay_policy u32
#   seed u64 | count u32
#   count * P * (A_p f64, tau_p f64, a_p f64)

DATASET_MAGIC = b"UWAD"
DATASET_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_CONFIG = struct.Struct("<ddIIdIddddI")
_TRAILER = struct.Struct("<QI")
HEADER_SIZE = _PREFIX.size + _CONFIG.size + _TRAILER.size


def pack_config(config):
    return _CONFIG.pack(
        config.f_c, config.bandwidth, config.N, config.N_g, config.beta, config.P,
        config.v_max, config.c_sound, config.mean_interarrival, config.total_decay_db,
        DELAY_POLICIES.index(config.delay_policy),
    )


def unpack_config(buf, offset=0):
    try:
        vals = _CONFIG.unpack_from(buf, offset)
    except struct.error as exc:
        raise FormatError("truncated system configuration", offset) from exc
    (f_c, bw, N, N_g, beta, P, v_max, c, mean_ia, decay, policy) = vals
    if policy >= len(DELAY_POLICIES):
        raise FormatError(f"unknown delay policy code {policy}", offset + _CONFIG.size - 4)
    try:
        return SystemConfig(
            f_c=f_c, bandwidth=bw, N=N, N_g=N_g, beta=beta, P=P, v_max=v_max,
            c_sound=c, mean_interarrival=mean_ia, total_decay_db=decay,
            delay_policy=DELAY_POLICIES[policy],
        )
    except ConfigError as exc:
        raise FormatError(f"embedded configuration invalid: {exc}", offset) from exc


def dataset_to_bytes(dataset):
    head = (
        _PREFIX.pack(DATASET_MAGIC, DATASET_VERSION, RNG_ALGORITHM_ID)
        + pack_config(dataset.config)
        + _TRAILER.pack(dataset.seed, len(dataset))
    )
    return head + dataset.paths.astype("<f8").tobytes()


def dataset_from_bytes(buf, expected_config=None):
    if len(buf) < _PREFIX.size:
        raise FormatError("file shorter than header", len(buf))
    magic, version, rng_id = _PREFIX.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", 0)
    if version != DATASET_VERSION:
        raise VersionError(f"unsupported dataset version {version}", 4)
    if rng_id != RNG_ALGORITHM_ID:
        raise VersionError(f"unknown RNG algorithm id {rng_id}", 8)
    config = unpack_config(buf, _PREFIX.size)
    off = _PREFIX.size + _CONFIG.size
    try:
        seed, count = _TRAILER.unpack_from(buf, off)
    except struct.error as exc:
        raise FormatError("truncated header", off) from exc
    off += _TRAILER.size
    need = count * config.P * 3 * 8
    if len(buf) - off != need:
        raise FormatError(
            f"body holds {len(buf) - off} bytes, expected {need} for {count} records",
            off + min(need, len(buf) - off),
        )
    if count < 1:
        raise FormatError("dataset holds no records", off - 4)
    if expected_config is not None and config != expected_config:
        raise VersionError("dataset configuration does not match the expected configuration")
    paths = np.frombuffer(buf, dtype="<f8", offset=off).reshape(count, config.P, 3)
    return ChannelDataset(config, seed, paths.astype(np.float64))


def save_dataset(dataset, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dataset_to_bytes(dataset))
    tmp.replace(path)


def load_dataset(path, expected_config=None):
    return dataset_from_bytes(Path(path).read_bytes(), expected_config)


# ------------------------------------------------------------- diagnostics

def path_statistics(dataset):
    """Summary statistics used by ``gen-dataset``.

    The decay slope is a within-realization least-squares fit of
    ``10 log10(A_p^2)`` against ``tau_p / T_g``; demeaning per realization
    removes the per-realization power normalization.
    """
    cfg = dataset.config
    amp, tau, a = dataset.paths[..., 0], dataset.paths[..., 1], dataset.paths[..., 2]
    stats = {
        "count": len(dataset),
        "a_min": float(a.min()),
        "a_max_observed": float(np.abs(a).max()),
        "a_max": cfg.a_max,
        "delay_max": float(tau.max()),
        "fraction_beyond_guard": float(np.mean(tau[:, -1] > cfg.T_g)),
    }
    if cfg.P > 1:
        stats["mean_interarrival"] = float(np.diff(tau, axis=1).mean())
        t_ref = cfg.T_g if cfg.N_g > 0 else cfg.T
        stats["decay_slope_db"] = decay_slope_db(amp, tau / t_ref)
    return stats


def decay_slope_db(amplitude, x):
    """Fixed-effects slope of ``10 log10(A^2)`` on ``x`` (rows = realizations)."""
    y = 10.0 * np.log10(np.maximum(amplitude, 1e-300) ** 2)
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    return float(np.sum(xc * yc) / np.sum(xc * xc))
