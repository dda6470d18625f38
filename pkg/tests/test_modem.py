import numpy as np
import pytest
from scipy.stats import norm

from conftest import random_complex, random_unitary
from uwamod.channel import ChannelDataset, PathSet, SystemConfig, generate_dataset, substream
from uwamod.modem import (
    NotUnitaryError,
    add_awgn,
    as_modulation,
    ber_sweep,
    ber_trial,
    dft_matrix,
    identity_matrix,
    lmmse_equalize,
    modulate,
    qpsk_demap,
    qpsk_map,
    write_ber_csv,
)

S = 1 / np.sqrt(2)


def identity_dataset(cfg, count=1):
    paths = np.tile(np.array([[1.0, 0.0, 0.0]]), (count, 1, 1))
    return ChannelDataset(cfg, 0, paths)


class TestQpsk:
    def test_anchor(self):
        np.testing.assert_allclose(qpsk_map([0, 0]), [(1 + 1j) * S])
        np.testing.assert_allclose(qpsk_map([1, 1, 0, 1]), [(-1 - 1j) * S, (1 - 1j) * S])

    def test_round_trip(self, rng):
        bits = rng.integers(0, 2, 64)
        np.testing.assert_array_equal(qpsk_demap(qpsk_map(bits)), bits)

    def test_sign_decision(self):
        np.testing.assert_array_equal(qpsk_demap(np.array([-0.3 + 0.01j])), [1, 0])

    def test_unit_power(self, rng):
        x = qpsk_map(rng.integers(0, 2, 200))
        np.testing.assert_allclose(np.abs(x), 1.0)

    @pytest.mark.parametrize("alpha", [1e-6, 0.3, 1.0, 1e4])
    def test_scale_invariant(self, rng, alpha):
        xhat = random_complex(rng, 50)
        np.testing.assert_array_equal(qpsk_demap(alpha * xhat), qpsk_demap(xhat))

    def test_odd_bits(self):
        with pytest.raises(ValueError):
            qpsk_map([0, 1, 1])


class TestModulate:
    def test_identity(self, rng):
        x = qpsk_map(rng.integers(0, 2, 16))
        np.testing.assert_array_equal(modulate(identity_matrix(8), x), x)

    def test_dft_of_constant(self):
        n = 8
        x = np.full(n, (1 + 1j) * S)
        s = modulate(dft_matrix(n), x)
        expected = np.zeros(n, complex)
        expected[0] = np.sqrt(n) * (1 + 1j) * S
        np.testing.assert_allclose(s, expected, atol=1e-12)

    def test_isometry(self, rng):
        for n in (2, 5, 16):
            f = random_unitary(rng, n)
            x = qpsk_map(rng.integers(0, 2, 2 * n))
            assert abs(np.linalg.norm(modulate(f, x)) - np.linalg.norm(x)) < 1e-12

    def test_batch(self, rng):
        f = random_unitary(rng, 4)
        x = random_complex(rng, 3, 4)
        np.testing.assert_allclose(modulate(f, x), (f @ x.T).T)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            modulate(np.eye(4), np.ones(3))


class TestBaselines:
    def test_dft2(self):
        np.testing.assert_allclose(dft_matrix(2), np.array([[1, 1], [1, -1]]) * S, atol=1e-15)

    def test_identity4(self):
        np.testing.assert_array_equal(identity_matrix(4), np.eye(4))

    def test_dft_unitary(self):
        f = dft_matrix(8)
        assert np.linalg.norm(f.conj().T @ f - np.eye(8)) < 1e-12

    def test_as_modulation_rejects(self):
        with pytest.raises(NotUnitaryError):
            as_modulation(0.5 * np.eye(3))
        with pytest.raises(ValueError):
            as_modulation(np.ones((2, 3)))


class TestAwgn:
    def test_zero_noise(self, rng):
        v = random_complex(rng, 10)
        np.testing.assert_array_equal(add_awgn(v, 0.0, rng), v)

    def test_variance_and_circularity(self, rng):
        w = add_awgn(np.zeros(10**6), 0.5, rng)
        assert np.mean(np.abs(w) ** 2) == pytest.approx(0.5, rel=0.01)
        assert np.var(w.real) == pytest.approx(0.25, rel=0.01)
        assert abs(np.corrcoef(w.real, w.imag)[0, 1]) < 0.01

    def test_negative(self, rng):
        with pytest.raises(ValueError):
            add_awgn(np.zeros(3), -1.0, rng)


class TestLmmse:
    def test_identity_shrinkage(self, rng):
        n, s2 = 6, 0.3
        he = np.vstack([np.eye(n), np.zeros((2, n))])
        x = qpsk_map(rng.integers(0, 2, 2 * n))
        r = np.concatenate([x, np.zeros(2)])
        np.testing.assert_allclose(lmmse_equalize(he, r, s2), x / (1 + s2), atol=1e-14)

    def test_zero_forcing_limit(self, rng):
        he = random_complex(rng, 12, 8)
        x = qpsk_map(rng.integers(0, 2, 16))
        np.testing.assert_allclose(lmmse_equalize(he, he @ x, 1e-12), x, atol=1e-6)

    def test_normal_equations_oracle(self, rng):
        he = random_complex(rng, 12, 8)
        r = random_complex(rng, 12)
        s2 = 0.2
        ref = np.linalg.inv(he.conj().T @ he + s2 * np.eye(8)) @ (he.conj().T @ r)
        np.testing.assert_allclose(lmmse_equalize(he, r, s2), ref, atol=1e-10)

    def test_batch_rows(self, rng):
        he = random_complex(rng, 10, 6)
        r = random_complex(rng, 4, 10)
        out = lmmse_equalize(he, r, 0.1)
        for k in range(4):
            np.testing.assert_allclose(out[k], lmmse_equalize(he, r[k], 0.1), atol=1e-13)

    def test_needs_positive_noise(self):
        with pytest.raises(ValueError):
            lmmse_equalize(np.eye(3), np.ones(3), 0.0)


class TestBer:
    cfg = SystemConfig(N=16, N_g=4, P=1)

    def test_noiseless_identity_channel(self):
        ds = identity_dataset(self.cfg, 4)
        (pt,) = ber_sweep(identity_matrix(16), ds, [200.0], trials=80, seed=1)
        assert pt.bits == 4 * 80 * 32 >= 10**4
        assert pt.bit_errors == 0

    def test_single_trial(self):
        paths = PathSet(np.ones(1), np.zeros(1), np.zeros(1))
        err, bits = ber_trial(dft_matrix(16), paths, self.cfg, 1e-20, substream(0, 0))
        assert (err, bits) == (0, 32)

    def test_awgn_q_function(self):
        ds = identity_dataset(self.cfg, 10)
        pts = ber_sweep(identity_matrix(16), ds, [2.0, 6.0], trials=1000, seed=3)
        for p in pts:
            ref = norm.sf(np.sqrt(10 ** (p.snr_db / 10)))
            sd = np.sqrt(ref * (1 - ref) / p.bits)
            assert abs(p.ber - ref) < 4 * sd

    def test_dft_matches_identity_on_awgn(self):
        ds = identity_dataset(self.cfg, 10)
        a = ber_sweep(identity_matrix(16), ds, [4.0], trials=1000, seed=3)[0]
        b = ber_sweep(dft_matrix(16), ds, [4.0], trials=1000, seed=3)[0]
        sd = np.sqrt(2 * a.ber * (1 - a.ber) / a.bits)
        assert abs(a.ber - b.ber) < 4 * sd

    def test_jobs_and_determinism(self):
        cfg = SystemConfig(N=8, N_g=2, P=3)
        ds = generate_dataset(cfg, 4, 12)
        f = dft_matrix(8)
        a = ber_sweep(f, ds, [5.0, 10.0], trials=20, seed=9)
        b = ber_sweep(f, ds, [5.0, 10.0], trials=20, seed=9, jobs=3)
        assert [p.bit_errors for p in a] == [p.bit_errors for p in b]

    def test_ber_monotone_in_snr(self):
        cfg = SystemConfig(N=8, N_g=2, P=3)
        ds = generate_dataset(cfg, 4, 30)
        pts = ber_sweep(identity_matrix(8), ds, [0.0, 10.0, 20.0], trials=50, seed=1)
        errs = [p.bit_errors for p in pts]
        assert errs[0] > errs[1] > errs[2]

    def test_empty_dataset(self):
        ds = ChannelDataset(self.cfg, 0, np.zeros((0, 1, 3)))
        with pytest.raises(ValueError, match="empty"):
            ber_sweep(identity_matrix(16), ds, [0.0], trials=1)

    def test_rejects_non_unitary(self):
        with pytest.raises(NotUnitaryError):
            ber_sweep(2 * identity_matrix(16), identity_dataset(self.cfg), [0.0], trials=1)

    def test_csv(self, tmp_path):
        pts = ber_sweep(identity_matrix(16), identity_dataset(self.cfg), [0.0, 3.0], trials=5)
        write_ber_csv(pts, tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "snr_db,trials,bits,bit_errors,ber"
        assert len(lines) == 3
        assert lines[1].startswith("0.0,5,160,")
