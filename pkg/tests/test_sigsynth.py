import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from widesense.errors import ConfigError, LengthError
from widesense.sigsynth import (
    NUM_SCHEMES,
    ChannelCfg,
    FrameCfg,
    ModScheme,
    apply_channel,
    assemble_frame,
    constellation,
    fading_taps,
    gen_symbols,
    noise_std,
    rrc_taps,
    shape_band,
    snr_grid,
    symbols_needed,
    synth_band,
)

SIZES = {ModScheme.BPSK: 2, ModScheme.QPSK: 4, ModScheme.QAM16: 16, ModScheme.QAM64: 64,
         ModScheme.QAM128: 128, ModScheme.QAM256: 256, ModScheme.PAM8: 8}


def rc_isi(taps, sps):
    """Largest off-centre symbol-spaced sample of the RRC cascade, relative to the peak."""
    rc = np.convolve(taps, taps)
    c = len(rc) // 2
    picks = rc[c % sps :: sps]
    centre = np.argmax(np.abs(picks))
    return np.max(np.abs(np.delete(picks, centre))) / abs(picks[centre])


class TestConstellations:
    @pytest.mark.parametrize("scheme", list(ModScheme))
    def test_unit_power_zero_mean(self, scheme):
        pts = constellation(scheme)
        assert len(pts) == SIZES[scheme]
        assert len(np.unique(np.round(pts, 12))) == len(pts)
        assert abs(np.mean(np.abs(pts) ** 2) - 1) < 1e-12
        assert abs(np.mean(pts)) < 1e-12

    def test_indices_leave_zero_for_vacant(self):
        assert [int(s) for s in ModScheme] == list(range(1, NUM_SCHEMES + 1))

    def test_cross_128_has_no_corners(self):
        pts = constellation(ModScheme.QAM128)
        grid = pts / np.min(np.abs(pts.real[pts.real != 0]))
        assert np.max(np.abs(grid.real)) == pytest.approx(11)
        assert not np.any((np.abs(grid.real) > 8.5) & (np.abs(grid.imag) > 8.5))

    def test_read_only(self):
        with pytest.raises(ValueError):
            constellation(ModScheme.QPSK)[0] = 0

    def test_pam8_is_real(self):
        assert np.all(constellation(ModScheme.PAM8).imag == 0)


class TestGenSymbols:
    def test_bpsk_alphabet(self, rng):
        assert set(np.round(gen_symbols(ModScheme.BPSK, 4, rng), 12)) <= {1 + 0j, -1 + 0j}

    def test_qpsk_unit_modulus(self, rng):
        np.testing.assert_allclose(np.abs(gen_symbols(ModScheme.QPSK, 1000, rng)), 1.0, atol=1e-15)

    def test_qam16_moments(self, rng):
        s = gen_symbols(ModScheme.QAM16, 100_000, rng)
        assert abs(np.mean(s)) < 0.01
        assert abs(np.mean(np.abs(s) ** 2) - 1) < 0.01

    def test_count_must_be_positive(self, rng):
        with pytest.raises(LengthError):
            gen_symbols(ModScheme.BPSK, 0, rng)

    def test_seeded_determinism(self):
        a = gen_symbols(ModScheme.QAM64, 50, np.random.default_rng(3))
        b = gen_symbols(ModScheme.QAM64, 50, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)


class TestRRC:
    def test_beta_zero_is_sinc(self):
        taps = rrc_taps(0.0, 4, 8)
        t = (np.arange(33) - 16) / 4
        ref = np.sinc(t)
        np.testing.assert_allclose(taps, ref / np.linalg.norm(ref), atol=1e-12)

    @given(st.floats(0.0, 1.0), st.integers(1, 8), st.integers(1, 8).map(lambda h: 2 * h))
    def test_symmetry_energy_peak(self, beta, sps, span):
        taps = rrc_taps(beta, sps, span)
        assert len(taps) == span * sps + 1
        np.testing.assert_array_equal(taps, taps[::-1])
        assert abs(np.sum(taps**2) - 1) < 1e-12
        assert np.argmax(taps) == len(taps) // 2

    def test_singular_points_match_neighbourhood_limit(self):
        # beta=0.25, sps=4 puts t = 1/(4 beta) = 1 exactly on a tap
        b = 0.25
        taps = rrc_taps(b, 4, 8)
        centre = len(taps) // 2

        def rrc(t):
            num = np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))
            return num / (np.pi * t * (1 - (4 * b * t) ** 2))

        limit = 0.5 * (rrc(1 - 1e-6) + rrc(1 + 1e-6))
        peak = 1 - b + 4 * b / np.pi
        assert np.all(np.isfinite(taps))
        assert taps[centre + 4] / taps[centre] == pytest.approx(limit / peak, rel=1e-6)
        assert taps[centre] / taps[centre + 1] == pytest.approx(peak / rrc(0.25), rel=1e-12)

    @pytest.mark.parametrize("bad", [-0.1, 1.5])
    def test_rolloff_range(self, bad):
        with pytest.raises(ConfigError):
            rrc_taps(bad, 4, 8)

    def test_sps_and_span_validation(self):
        with pytest.raises(ConfigError):
            rrc_taps(0.35, 0, 8)
        with pytest.raises(ConfigError):
            rrc_taps(0.35, 4, 1)

    @pytest.mark.xfail(
        strict=True,
        reason="span-8 truncation leaves ~1e-2 cascade ISI; bound needs a longer span (default is 32)",
    )
    def test_cascade_isi_span8(self):
        assert rc_isi(rrc_taps(0.35, 4, 8), 4) < 1e-3

    @pytest.mark.parametrize("sps", [2, 4])
    def test_cascade_isi_default_span(self, sps):
        taps = rrc_taps(0.35, sps, 32)
        rc = np.convolve(taps, taps)
        c = len(rc) // 2
        picks = rc[c % sps :: sps]
        off = np.delete(picks, c // sps)
        # RMS off-centre ISI, the quantity that bounds the loopback EVM
        assert np.sqrt(np.sum(off**2)) / picks[c // sps] < 1e-3


class TestShapeBand:
    def test_impulse_response(self):
        taps = rrc_taps(0.35, 4, 8)
        y = shape_band(np.array([1.0 + 0j]), taps, 4, len(taps))
        np.testing.assert_allclose(y / y[np.argmax(np.abs(y))], taps / taps.max(), atol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(10, 200))
    def test_unit_power(self, seed, n):
        rng = np.random.default_rng(seed)
        sym = gen_symbols(ModScheme.QAM16, symbols_needed(n, 2, 8), rng)
        y = shape_band(sym, rrc_taps(0.35, 2, 8), 2, n, discard=16)
        assert abs(np.mean(np.abs(y) ** 2) - 1) < 1e-12

    def test_too_few_symbols(self):
        with pytest.raises(LengthError):
            shape_band(np.ones(3), rrc_taps(0.35, 2, 8), 2, 100)

    def test_out_of_band_energy(self, rng):
        # Hann window keeps rectangular-window leakage from masking the filter
        n, beta, sps = 299, 0.35, 2
        win = np.hanning(n)
        f = np.fft.fftfreq(n)
        outside = np.abs(f) > 0.5 * (1 + beta) / sps
        ratios = []
        for _ in range(50):
            y, _ = synth_band(ModScheme.QPSK, n, rng)
            p = np.abs(np.fft.fft(y * win)) ** 2
            ratios.append(p[outside].sum() / p.sum())
        assert 10 * np.log10(np.max(ratios)) < -30

    def test_synth_band_symbol_alignment(self, rng):
        y, sym = synth_band(ModScheme.QPSK, 200, rng)
        assert len(y) == 200 and len(sym) == symbols_needed(200, 2, 32)


class TestChannel:
    def test_awgn_identity(self, rng):
        band = rng.standard_normal(50) + 1j * rng.standard_normal(50)
        out = apply_channel(band, ChannelCfg("awgn"), rng)
        np.testing.assert_array_equal(out, band)

    def test_rayleigh_statistics(self):
        rng = np.random.default_rng(7)
        cfg = ChannelCfg("rayleigh")
        h = np.array([fading_taps(cfg, 1, rng)[0] for _ in range(100_000)])
        assert abs(np.mean(np.abs(h) ** 2) - 1) < 0.02
        # |h| ~ Rayleigh with E|h|^2 = 1, i.e. scale 1/sqrt(2)
        ks = stats.kstest(np.abs(h), "rayleigh", args=(0, 1 / np.sqrt(2)))
        assert ks.statistic < 1.63 / np.sqrt(len(h))

    def test_rician_los_limit(self, rng):
        h = fading_taps(ChannelCfg("rician", rician_k=1e6), 299, rng)
        assert np.max(np.abs(h - h[0])) < 1e-2
        assert abs(abs(h[0]) - 1) < 1e-2

    def test_quasi_static_default(self, rng):
        h = fading_taps(ChannelCfg("rayleigh"), 299, rng)
        assert np.max(np.abs(np.diff(h))) < 0.01

    @pytest.mark.parametrize("kw", [{"kind": "nakagami"}, {"normalized_doppler": -1},
                                    {"rician_k": -1}, {"kind": "rayleigh", "num_paths": 0}])
    def test_validation(self, kw):
        with pytest.raises(ConfigError):
            ChannelCfg(**kw)


class TestFrames:
    def test_all_vacant_noiseless_is_zero(self):
        f = assemble_frame(FrameCfg(snr_db=float("inf"), occupancy=(0,) * 14), 1)
        assert not f.x.any() and not f.occupancy.any() and not f.mods.any()

    def test_single_band_noiseless(self):
        occ = [0] * 14
        occ[5] = 1
        f = assemble_frame(FrameCfg(snr_db=float("inf"), occupancy=tuple(occ)), 2)
        nz = np.flatnonzero(np.any(f.x != 0, axis=1))
        assert nz.tolist() == [5]

    @given(st.integers(0, 2**63 - 1), st.sampled_from(["awgn", "rayleigh", "rician"]))
    def test_label_invariants(self, seed, kind):
        cfg = FrameCfg(channel=ChannelCfg(kind))
        f = assemble_frame(cfg, seed)
        assert 1 <= f.occupancy.sum() <= cfg.p_max
        assert np.array_equal(f.occupancy != 0, f.mods != 0)
        assert f.mods.max() <= NUM_SCHEMES
        assert f.x.shape == (14, 299)
        assert f.support == tuple(np.flatnonzero(f.occupancy))

    def test_determinism(self):
        a = assemble_frame(FrameCfg(channel=ChannelCfg("rician")), 99)
        b = assemble_frame(FrameCfg(channel=ChannelCfg("rician")), 99)
        np.testing.assert_array_equal(a.x, b.x)

    def test_regeneration_from_labels(self):
        cfg = FrameCfg(channel=ChannelCfg("rayleigh"))
        a = assemble_frame(cfg, 5)
        b = assemble_frame(cfg.replace(mods=tuple(a.mods)), 5)
        np.testing.assert_array_equal(a.x, b.x)

    def test_forced_mods(self):
        mods = (0, 3, 0, 0, 7) + (0,) * 9
        f = assemble_frame(FrameCfg(mods=mods), 0)
        assert tuple(f.mods) == mods and tuple(f.occupancy) == tuple(int(m != 0) for m in mods)

    def test_forced_mods_disagreeing_with_occupancy(self):
        with pytest.raises(ConfigError):
            assemble_frame(FrameCfg(mods=(1,) + (0,) * 13, occupancy=(0, 1) + (0,) * 12), 0)

    def test_pmax_above_k_rejected(self):
        with pytest.raises(ConfigError):
            FrameCfg(p_max=8, n_adcs=7)

    def test_too_many_forced_bands(self):
        with pytest.raises(ConfigError):
            assemble_frame(FrameCfg(occupancy=(1,) * 8 + (0,) * 6), 0)

    def test_noise_std(self):
        assert noise_std(float("inf")) == 0
        assert noise_std(0) == 1
        assert noise_std(20) == pytest.approx(0.1)

    def test_snr_grid(self):
        g = snr_grid()
        assert len(g) == 16 and g[0] == -10 and g[-1] == 20

    def test_snr_calibration_zero_db(self):
        sig = noise = 0.0
        rng = np.random.default_rng(1)
        for _ in range(1000):
            f = assemble_frame(FrameCfg(snr_db=0.0), rng)
            busy = f.occupancy.astype(bool)
            sig += np.sum(np.abs(f.clean[busy]) ** 2)
            noise += np.sum(np.abs(f.x[busy] - f.clean[busy]) ** 2)
        assert abs(10 * np.log10(sig / noise)) < 0.5
