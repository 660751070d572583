import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from widesense.errors import ConfigError, DegenerateSupportError, LengthError, ShapeError
from widesense.recon import (
    as_support,
    ddc,
    ddc_samples_needed,
    ddc_symbol_offset,
    evm,
    pseudo_reconstruct,
    somp,
    support_reconstruct,
)
from widesense.sampler import Measurement, build_sensing_matrix, default_sensing_matrix, sample
from widesense.sigsynth import FrameCfg, ModScheme, assemble_frame, rrc_taps, synth_band

NOISELESS = FrameCfg(snr_db=float("inf"))


def noiseless(seed, p_max=4):
    return assemble_frame(NOISELESS.replace(p_max=p_max), seed)


class TestPseudo:
    def test_square_dft_is_exact(self):
        sm = build_sensing_matrix(14, 14, list(range(14)))
        f = assemble_frame(FrameCfg(), 0)
        np.testing.assert_allclose(pseudo_reconstruct(sm, sample(f, sm)), f.x, atol=1e-10)

    def test_zero_measurement(self):
        sm = default_sensing_matrix()
        assert not pseudo_reconstruct(sm, Measurement(z=np.zeros((7, 10), complex))).any()

    def test_single_band_leakage(self):
        sm = default_sensing_matrix()
        occ = [0] * 14
        occ[3] = 1
        f = assemble_frame(NOISELESS.replace(occupancy=tuple(occ)), 8)
        xt = pseudo_reconstruct(sm, sample(f, sm))
        leak = sm.pinv @ sm.a
        np.testing.assert_allclose(xt, np.outer(leak[:, 3], f.x[3]), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pseudo_reconstruct(default_sensing_matrix(), Measurement(z=np.zeros((6, 5), complex)))


class TestSupportReconstruct:
    def test_empty_support(self):
        sm = default_sensing_matrix()
        m = sample(noiseless(0), sm)
        assert not support_reconstruct(sm, m, ()).any()

    @given(st.integers(0, 2**32 - 1))
    def test_true_support_exact(self, seed):
        sm = default_sensing_matrix()
        f = noiseless(seed)
        xhat = support_reconstruct(sm, sample(f, sm), f.support)
        rows = list(f.support)
        assert np.linalg.norm(xhat[rows] - f.x[rows]) / np.linalg.norm(f.x[rows]) < 1e-9
        off = np.setdiff1d(np.arange(14), rows)
        assert np.all(xhat[off] == 0)  # bit-exact zeros

    @given(st.integers(0, 2**32 - 1), st.data())
    def test_superset_support(self, seed, data):
        sm = default_sensing_matrix()
        f = noiseless(seed, p_max=3)
        extra = data.draw(st.lists(st.integers(0, 13), max_size=7 - len(f.support), unique=True))
        s = as_support(set(f.support) | set(extra))
        if len(s) > 7 or np.linalg.svd(sm.a[:, s], compute_uv=False)[-1] < 1e-6:
            return
        xhat = support_reconstruct(sm, sample(f, sm), s)
        np.testing.assert_allclose(xhat, f.x, atol=1e-9 * np.abs(f.x).max())

    def test_too_large_support(self):
        sm = default_sensing_matrix()
        with pytest.raises(DegenerateSupportError):
            support_reconstruct(sm, sample(noiseless(0), sm), range(8))

    def test_rank_deficient_support(self):
        # duplicate columns make any support containing both singular
        a = np.array([[1, 1, 0], [0, 0, 1]], dtype=complex)
        from widesense.sampler import SensingMatrix

        sm = SensingMatrix.from_matrix(a)
        with pytest.raises(DegenerateSupportError):
            support_reconstruct(sm, Measurement(z=np.ones((2, 4), complex)), (0, 1))

    def test_as_support(self):
        assert as_support([3, 1, 3]) == (1, 3)
        with pytest.raises(ConfigError):
            as_support([14], 14)


class TestSomp:
    def test_zero_sparsity(self):
        sm = default_sensing_matrix()
        m = sample(noiseless(1), sm)
        res = somp(sm, m, 0)
        assert res.support == () and np.array_equal(res.residual, m.z)

    @given(st.integers(0, 2**32 - 1))
    def test_noiseless_recovery_and_monotone_residual(self, seed):
        sm = default_sensing_matrix()
        f = noiseless(seed, p_max=3)
        res = somp(sm, sample(f, sm), len(f.support))
        assert res.support == f.support
        assert res.residual_norms[-1] < 1e-9 * res.residual_norms[0]
        assert all(b <= a + 1e-12 for a, b in zip(res.residual_norms, res.residual_norms[1:]))

    @given(st.integers(0, 2**32 - 1), st.sampled_from([-5.0, 0.0, 10.0]))
    def test_residual_monotone_with_noise(self, seed, snr):
        sm = default_sensing_matrix()
        f = assemble_frame(FrameCfg(snr_db=snr), seed)
        res = somp(sm, sample(f, sm), 7)
        assert all(b <= a * (1 + 1e-12) for a, b in zip(res.residual_norms, res.residual_norms[1:]))
        assert len(res.order) == len(set(res.order)) == 7

    def test_single_pick_matches_exhaustive_search(self, rng):
        sm = build_sensing_matrix(4, 8, [0, 1, 3, 6])
        for _ in range(30):
            # one snapshot: the correlation score and the projection residual agree
            z = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
            m = Measurement(z=z)
            best = min(range(8), key=lambda c: np.linalg.norm(z - np.outer(sm.a[:, c], sm.a[:, c].conj() @ z)))
            assert somp(sm, m, 1).support == (best,)

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_matches_naive_greedy(self, k, rng):
        sm = default_sensing_matrix()
        for _ in range(10):
            z = rng.standard_normal((7, 30)) + 1j * rng.standard_normal((7, 30))
            chosen, r = [], z
            for _ in range(k):
                scores = [-1.0 if j in chosen else np.abs(sm.a[:, j].conj() @ r).sum() for j in range(14)]
                chosen.append(int(np.argmax(scores)))
                a_s = sm.a[:, chosen]
                r = z - a_s @ np.linalg.lstsq(a_s, z, rcond=None)[0]
            res = somp(sm, Measurement(z=z), k)
            assert list(res.order) == chosen
            assert res.support == tuple(sorted(chosen))
            np.testing.assert_allclose(res.residual, r, atol=1e-10)

    def test_two_sparse_matches_exhaustive_on_default_matrix(self, rng):
        sm = default_sensing_matrix()
        for _ in range(30):
            s = tuple(sorted(rng.choice(14, size=2, replace=False)))
            x = np.zeros((14, 20), complex)
            x[list(s)] = rng.standard_normal((2, 20)) + 1j * rng.standard_normal((2, 20))
            m = Measurement(z=sm.a @ x)
            best = min(
                itertools.combinations(range(14), 2),
                key=lambda c: np.linalg.norm(m.z - sm.a[:, c] @ np.linalg.lstsq(sm.a[:, c], m.z, rcond=None)[0]),
            )
            assert somp(sm, m, 2).support == tuple(best) == s

    def test_tie_breaks_to_lowest_index(self):
        from widesense.sampler import SensingMatrix

        sm = SensingMatrix.from_matrix(np.array([[1, 1, 0], [0, 0, 1]], dtype=complex))
        assert somp(sm, Measurement(z=np.array([[1.0], [0.0]], complex)), 1).support == (0,)

    @pytest.mark.parametrize("k", [-1, 8])
    def test_sparsity_range(self, k):
        sm = default_sensing_matrix()
        with pytest.raises(ConfigError):
            somp(sm, sample(noiseless(0), sm), k)


class TestDDC:
    def test_zero_row(self):
        assert not ddc(np.zeros(576, complex), rrc_taps(0.35, 2, 32), 2, 256).any()

    def test_classification_length(self):
        n = ddc_samples_needed(256, 2, 32)
        assert n == 576
        assert len(ddc(np.ones(n, complex), rrc_taps(0.35, 2, 32), 2, 256)) == 256

    def test_too_short(self):
        with pytest.raises(LengthError):
            ddc(np.ones(574, complex), rrc_taps(0.35, 2, 32), 2, 256)

    @pytest.mark.parametrize("scheme", list(ModScheme))
    def test_loopback_evm(self, scheme):
        rng = np.random.default_rng(int(scheme))
        row, syms = synth_band(scheme, ddc_samples_needed(256, 2, 32), rng)
        y = ddc(row, rrc_taps(0.35, 2, 32), 2, 256)
        off = ddc_symbol_offset(2, 32)
        assert evm(y, syms[off : off + 256]) < 1e-3

    def test_evm_helpers(self):
        ref = np.array([1, -1, 1j], complex)
        assert evm(3 * ref, ref) < 1e-15
        assert evm(np.zeros(3), np.zeros(3)) == 0.0
        assert evm(np.zeros(3), ref) == 1.0
