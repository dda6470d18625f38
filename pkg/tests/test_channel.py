import cmath
import math

import numpy as np
import pytest

from uwamod.channel import (
    ChannelDataset,
    PathSet,
    SystemConfig,
    build_channel_matrix,
    dataset_to_bytes,
    generate_dataset,
    load_dataset,
    path_statistics,
    raised_cosine,
    sample_paths,
    save_dataset,
    substream,
)
from uwamod.errors import ConfigError, FormatError, VersionError


def rc_scalar(t, T, beta):
    """Reference raised cosine evaluated with math only."""
    x = t / T
    if x == 0:
        return 1.0
    if abs(abs(x) - 1 / (2 * beta)) < 1e-12:
        y = 1 / (2 * beta)
        return math.pi / 4 * math.sin(math.pi * y) / (math.pi * y)
    return (math.sin(math.pi * x) / (math.pi * x)) * math.cos(math.pi * beta * x) / (1 - (2 * beta * x) ** 2)


def channel_scalar(paths, cfg):
    T = 1 / cfg.bandwidth
    H = [[0j] * cfg.N for _ in range(cfg.N + cfg.N_g)]
    for n in range(cfg.N + cfg.N_g):
        for m in range(cfg.N):
            acc = 0j
            for A, tau, a in zip(paths.amplitude, paths.delay, paths.scale):
                h = A * cmath.exp(-2j * math.pi * cfg.f_c * tau)
                acc += h * cmath.exp(2j * math.pi * a * cfg.f_c * n * T) * rc_scalar(
                    (1 + a) * n * T - tau - m * T, T, cfg.beta)
            H[n][m] = acc
    return np.array(H)


def unit_path(tau=0.0, a=0.0):
    return PathSet(np.array([1.0]), np.array([tau]), np.array([a]))


class TestRaisedCosine:
    def test_peak(self):
        assert raised_cosine(0.0, 1e-3, 0.65) == 1.0

    @pytest.mark.parametrize("beta", [0.1, 0.5, 0.65, 1.0])
    @pytest.mark.parametrize("k", [1, 2, 3, -3, 7])
    def test_nyquist_zeros(self, beta, k):
        T = 2e-4
        assert abs(raised_cosine(k * T, T, beta)) < 1e-12

    def test_singular_point(self):
        T, beta = 2e-4, 0.65
        expected = math.pi / 4 * math.sin(math.pi / 1.3) / (math.pi / 1.3)
        assert expected == pytest.approx(0.21551486, abs=1e-8)
        t0 = T / (2 * beta)
        assert raised_cosine(t0, T, beta) == pytest.approx(expected, abs=1e-15)
        assert raised_cosine(-t0, T, beta) == pytest.approx(expected, abs=1e-15)
        # continuity with neighbours just outside the guard band
        for d in (1e-6, -1e-6):
            assert raised_cosine(t0 * (1 + d), T, beta) == pytest.approx(expected, abs=1e-5)

    def test_matches_scalar_reference(self, rng):
        T = 2e-4
        t = rng.uniform(-10 * T, 10 * T, 200)
        ref = [rc_scalar(x, T, 0.65) for x in t]
        np.testing.assert_allclose(raised_cosine(t, T, 0.65), ref, atol=1e-14)


class TestSystemConfig:
    def test_defaults(self):
        cfg = SystemConfig()
        assert cfg.T == pytest.approx(2e-4)
        assert cfg.T_g == pytest.approx(12.8e-3)
        assert cfg.a_max == pytest.approx(20 * 1852 / 3600 / 1500)

    @pytest.mark.parametrize("bad", [
        dict(N=1), dict(N_g=-1), dict(beta=0.0), dict(beta=1.5), dict(P=0),
        dict(v_max=1600.0), dict(bandwidth=0.0), dict(delay_policy="drop"),
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            SystemConfig(**bad)

    def test_from_dict_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            SystemConfig.from_dict({"N": 8, "bogus": 1})


class TestSamplePaths:
    def test_single_path(self, rng):
        cfg = SystemConfig(N=8, N_g=2, P=1)
        p = sample_paths(cfg, rng)
        assert p.delay.tolist() == [0.0]
        assert abs(p.scale[0]) <= cfg.a_max
        amps = np.array([sample_paths(cfg, rng).amplitude[0] for _ in range(20000)])
        assert np.mean(amps**2) == pytest.approx(1.0, rel=0.05)

    def test_invariants(self, rng):
        cfg = SystemConfig(N=16, N_g=4, P=6)
        for _ in range(200):
            p = sample_paths(cfg, rng)
            assert p.delay[0] == 0 and np.all(np.diff(p.delay) >= 0)
            assert np.all(np.abs(p.scale) <= cfg.a_max)
            assert np.all(p.amplitude >= 0)

    def test_reject_policy_keeps_delays_in_guard(self, rng):
        cfg = SystemConfig(N=16, N_g=8, P=3, delay_policy="reject")
        for _ in range(200):
            assert sample_paths(cfg, rng).delay[-1] <= cfg.T_g

    def test_reject_policy_impossible(self, rng):
        cfg = SystemConfig(N=4, N_g=0, P=3, delay_policy="reject")
        with pytest.raises(ConfigError):
            sample_paths(cfg, rng)

    def test_expected_power_normalized(self):
        cfg = SystemConfig(N=32, N_g=8, P=4)
        ds = generate_dataset(cfg, 3, 20000)
        power = np.sum(ds.paths[..., 0] ** 2, axis=1)
        assert power.mean() == pytest.approx(1.0, rel=0.02)

    def test_doppler_hard_bound(self):
        cfg = SystemConfig(N=8, N_g=2, P=8)
        a = generate_dataset(cfg, 9, 125_000).paths[..., 2]
        assert a.size == 10**6
        assert np.all(np.abs(a) <= cfg.a_max)


class TestBuildChannelMatrix:
    def test_identity_channel(self, small_cfg):
        H = build_channel_matrix(unit_path(), small_cfg)
        expected = np.vstack([np.eye(8), np.zeros((2, 8))])
        np.testing.assert_allclose(H, expected, atol=1e-15)

    @pytest.mark.parametrize("d", [1, 2])
    def test_pure_delay(self, small_cfg, d):
        T = small_cfg.T
        H = build_channel_matrix(unit_path(tau=d * T), small_cfg)
        expected = np.zeros((10, 8), dtype=complex)
        expected[d:d + 8, :] = np.eye(8)
        expected *= np.exp(-2j * np.pi * small_cfg.f_c * d * T)
        np.testing.assert_allclose(H, expected, atol=1e-12)

    def test_integer_delays_give_bands(self):
        cfg = SystemConfig(N=8, N_g=3, P=2)
        T = cfg.T
        paths = PathSet(np.array([0.8, 0.6]), np.array([0.0, 3 * T]), np.zeros(2))
        H = build_channel_matrix(paths, cfg)
        nz = np.abs(H) > 1e-12
        rows, cols = np.nonzero(nz)
        assert set((rows - cols).tolist()) == {0, 3}

    def test_unit_column_energy(self, small_cfg):
        H = build_channel_matrix(unit_path(), small_cfg)
        np.testing.assert_allclose(np.linalg.norm(H, axis=0), 1.0)

    def test_against_scalar_oracle(self, small_cfg, rng):
        for _ in range(3):
            paths = sample_paths(small_cfg, rng)
            np.testing.assert_allclose(
                build_channel_matrix(paths, small_cfg), channel_scalar(paths, small_cfg), atol=1e-12)

    def test_shape(self):
        cfg = SystemConfig(N=16, N_g=4, P=4)
        H = build_channel_matrix(sample_paths(cfg, np.random.default_rng(0)), cfg)
        assert H.shape == (20, 16)


class TestDataset:
    def test_determinism(self, small_cfg):
        assert generate_dataset(small_cfg, 7, 10) == generate_dataset(small_cfg, 7, 10)

    def test_seed_sensitivity(self, small_cfg):
        assert generate_dataset(small_cfg, 7, 10) != generate_dataset(small_cfg, 8, 10)

    def test_prefix_stability(self, small_cfg):
        a = generate_dataset(small_cfg, 7, 10)
        b = generate_dataset(small_cfg, 7, 4)
        np.testing.assert_array_equal(a.paths[:4], b.paths)

    def test_jobs_do_not_change_result(self, small_cfg):
        assert generate_dataset(small_cfg, 5, 30, jobs=2) == generate_dataset(small_cfg, 5, 30)

    def test_round_trip(self, small_cfg, tmp_path):
        ds = generate_dataset(small_cfg, 7, 10)
        save_dataset(ds, tmp_path / "d.uwad")
        back = load_dataset(tmp_path / "d.uwad")
        assert back == ds
        assert back[3] == ds[3]
        np.testing.assert_array_equal(back.matrices(), ds.matrices())

    def test_count_zero_rejected(self, small_cfg):
        with pytest.raises(ConfigError):
            generate_dataset(small_cfg, 1, 0)

    def test_header_layout(self, small_cfg):
        buf = dataset_to_bytes(generate_dataset(small_cfg, 7, 2))
        assert buf[:4] == b"UWAD"
        assert int.from_bytes(buf[4:8], "little") == 1
        assert len(buf) == 96 + 2 * 3 * 3 * 8

    def test_bad_magic(self, small_cfg, tmp_path):
        buf = bytearray(dataset_to_bytes(generate_dataset(small_cfg, 7, 2)))
        buf[0:4] = b"XXXX"
        (tmp_path / "bad").write_bytes(bytes(buf))
        with pytest.raises(FormatError) as exc:
            load_dataset(tmp_path / "bad")
        assert exc.value.offset == 0

    def test_truncated(self, small_cfg, tmp_path):
        buf = dataset_to_bytes(generate_dataset(small_cfg, 7, 2))
        (tmp_path / "t").write_bytes(buf[:-5])
        with pytest.raises(FormatError, match="byte offset"):
            load_dataset(tmp_path / "t")

    def test_version_mismatch(self, small_cfg, tmp_path):
        buf = bytearray(dataset_to_bytes(generate_dataset(small_cfg, 7, 2)))
        buf[4] = 9
        (tmp_path / "v").write_bytes(bytes(buf))
        with pytest.raises(VersionError):
            load_dataset(tmp_path / "v")

    def test_config_mismatch(self, small_cfg, tmp_path):
        save_dataset(generate_dataset(small_cfg, 7, 2), tmp_path / "d")
        with pytest.raises(VersionError):
            load_dataset(tmp_path / "d", expected_config=SystemConfig(N=16, N_g=2, P=3))

    def test_bad_shape(self, small_cfg):
        with pytest.raises(ValueError):
            ChannelDataset(small_cfg, 0, np.zeros((2, 5, 3)))


def test_substreams_independent():
    a = substream(1, 0).random(4)
    b = substream(1, 1).random(4)
    c = substream(1, 0, stream=2).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    np.testing.assert_array_equal(a, substream(1, 0).random(4))


@pytest.fixture(scope="module")
def stats():
    return path_statistics(generate_dataset(SystemConfig(), 2024, 100_000))


class TestPathStatistics:
    """Inter-arrival mean and power decay at the default parameters."""

    def test_mean_interarrival(self, stats):
        assert stats["mean_interarrival"] == pytest.approx(1e-3, rel=0.01)

    def test_decay_slope(self, stats):
        assert stats["decay_slope_db"] == pytest.approx(-20.0, abs=0.5)

    def test_doppler_bound(self, stats):
        assert stats["a_max_observed"] <= stats["a_max"]
