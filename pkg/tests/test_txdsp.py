import numpy as np
import pytest
from scipy import stats

from ccfsim.core import Seed
from ccfsim.errors import ConfigError
from ccfsim.txdsp import (
    MAX_ROLLOFF,
    core_mux_emulate,
    draw_frame,
    matched_filter,
    mb_shape,
    rrc_modulate,
    truncated_36qam_points,
    wdm_assemble,
    add_phase_noise,
)


class TestConstellationPoints:
    def test_count_and_truncation(self):
        pts = truncated_36qam_points()
        assert pts.size == 36
        # the dropped 64QAM points all have a +-7 coordinate
        full = np.array(
            [x + 1j * y for x in range(-7, 8, 2) for y in range(-7, 8, 2)]
        )
        dropped = np.array([p for p in full if p not in pts])
        assert dropped.size == 28
        assert np.all(
            np.maximum(np.abs(dropped.real), np.abs(dropped.imag)) == 7
        )

    def test_energy_levels(self):
        en = np.abs(truncated_36qam_points()) ** 2
        np.testing.assert_allclose(
            np.unique(np.round(en, 9)), [2, 10, 18, 26, 34, 50]
        )

    def test_uniform_mean_energy(self):
        # average of the 36 enumerated energies: 840/36 = 70/3
        en = np.abs(truncated_36qam_points()) ** 2
        assert en.mean() == pytest.approx(70.0 / 3.0, rel=1e-12)


class TestMbShaping:
    def test_max_entropy_is_uniform(self):
        c = mb_shape(np.log2(36.0))
        assert c.nu == 0.0
        np.testing.assert_allclose(c.probs, 1.0 / 36.0, atol=1e-12)

    def test_target_entropy_hit(self):
        c = mb_shape(4.688)
        assert c.entropy_2d == pytest.approx(4.688, abs=1e-9)
        # frozen from the bisection against the direct entropy evaluation
        assert c.nu == pytest.approx(0.06805963, abs=1e-6)

    def test_unit_mean_energy(self):
        c = mb_shape(4.688)
        assert c.mean_energy() == pytest.approx(1.0, abs=1e-9)

    def test_ring_symmetry(self):
        c = mb_shape(4.688)
        en = np.round(np.abs(c.points) ** 2, 9)
        for level in np.unique(en):
            p = c.probs[en == level]
            np.testing.assert_allclose(p, p[0], rtol=1e-12)

    def test_entropy_decreases_with_nu(self):
        from ccfsim.txdsp import _entropy_bits, _mb_probs

        en = np.abs(truncated_36qam_points()) ** 2
        nus = np.linspace(0.0, 1.0, 21)
        hs = [_entropy_bits(_mb_probs(nu, en)) for nu in nus]
        assert all(a > b for a, b in zip(hs, hs[1:]))

    def test_infeasible_targets(self):
        with pytest.raises(ValueError):
            mb_shape(np.log2(36.0) + 0.01)
        with pytest.raises(ValueError):
            mb_shape(1.5)  # below the 4-point floor of log2(4) = 2

    def test_probs_sum_to_one(self):
        c = mb_shape(3.2)
        assert c.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(c.probs > 0)


class TestDrawFrame:
    def test_no_pilots(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(0), c, 2, 256, pilot_rate=0.0)
        assert not f.pilot_mask.any()

    def test_seeded_determinism(self):
        c = mb_shape(4.688)
        a = draw_frame(Seed(3, ("f",)), c, 2, 512, 1 / 64)
        b = draw_frame(Seed(3, ("f",)), c, 2, 512, 1 / 64)
        np.testing.assert_array_equal(a.symbols, b.symbols)

    def test_pilot_spacing(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(1), c, 2, 640, pilot_rate=1 / 64)
        idx = np.flatnonzero(f.pilot_mask)
        assert np.all(np.diff(idx) == 64)
        # pilots sit at the constellation's mean power
        assert np.all(np.abs(np.abs(f.symbols[:, f.pilot_mask]) - 1.0) < 1e-12)

    def test_empirical_entropy(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(2), c, 1, 1 << 20, pilot_rate=0.0)
        _, counts = np.unique(f.symbols, return_counts=True)
        p = counts / counts.sum()
        h = -np.sum(p * np.log2(p))
        assert h == pytest.approx(c.entropy_2d, abs=0.01)

    def test_distribution_chi_square(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(5), c, 1, 1 << 17, pilot_rate=0.0)
        sym = f.symbols.ravel()
        pts = c.points
        idx = np.argmin(np.abs(sym[:, None] - pts[None, :]), axis=1)
        counts = np.bincount(idx, minlength=36)
        _, p_value = stats.chisquare(counts, c.probs * sym.size)
        assert p_value > 0.001


class TestRrc:
    def test_single_pulse_peak(self):
        c = mb_shape(4.688)
        m = 64
        sym = np.zeros((1, m), dtype=complex)
        sym[0, m // 2] = 2.0 + 1.0j
        from ccfsim.txdsp import SymbolFrame

        f = SymbolFrame(sym, np.zeros(m, dtype=bool))
        w = rrc_modulate(f, sps=4, rolloff=0.05, normalize_power=False)
        peak = w.samples[0, (m // 2) * 4]
        assert peak == pytest.approx(2.0 + 1.0j, abs=1e-9)

    def test_matched_cascade_isi(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(7), c, 1, 2048, 0.0)
        w = rrc_modulate(f, sps=2, rolloff=0.05, normalize_power=False)
        mf = matched_filter(w, f.symbol_rate, 0.05)
        got = mf.samples[0, ::2]
        sym = f.symbols[0]
        gain = np.vdot(sym, got) / np.vdot(sym, sym)  # cascade scalar gain
        err = np.mean(np.abs(got / gain - sym) ** 2) / np.mean(np.abs(sym) ** 2)
        assert 10 * np.log10(err) < -40.0

    def test_unit_power(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(8), c, 3, 4096, 0.0)
        w = rrc_modulate(f, sps=2, rolloff=0.05)
        np.testing.assert_allclose(w.channel_power(), 1.0, atol=1e-6)

    def test_occupied_bandwidth(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(9), c, 1, 8192, 0.0)
        w = rrc_modulate(f, sps=2, rolloff=0.05)
        spec = np.abs(np.fft.fft(w.samples[0])) ** 2
        freq = w.frequencies()
        # -3 dB points should bracket the 140 GHz symbol rate
        smooth = np.convolve(spec, np.ones(64) / 64, mode="same")
        inband = smooth > 0.5 * np.median(smooth[np.abs(freq) < 50e9])
        bw = freq[inband]
        assert bw.max() - bw.min() == pytest.approx(140e9, rel=0.05)
        # nothing escapes the 150 GHz slot
        out_slot = np.abs(freq) > 75e9
        assert smooth[out_slot].max() < 1e-3 * smooth.max()

    def test_rolloff_grid_limit(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(10), c, 1, 128, 0.0)
        with pytest.raises(ConfigError):
            rrc_modulate(f, sps=2, rolloff=MAX_ROLLOFF + 0.01)

    def test_sps_lower_bound(self):
        c = mb_shape(4.688)
        f = draw_frame(Seed(11), c, 1, 128, 0.0)
        with pytest.raises(ValueError):
            rrc_modulate(f, sps=1)


class TestCoreMux:
    def make_wave(self, n=8192):
        c = mb_shape(4.688)
        f = draw_frame(Seed(20), c, 2, n, 1 / 64)
        return f, rrc_modulate(f, sps=2, rolloff=0.05)

    def test_two_channels_identity(self):
        f, w = self.make_wave()
        out, delays = core_mux_emulate(w, 2, Seed(21))
        np.testing.assert_array_equal(out.samples, w.samples)
        np.testing.assert_array_equal(delays, 0)

    def test_twelve_core_delays_distinct(self):
        f, w = self.make_wave()
        out, delays = core_mux_emulate(w, 24, Seed(22), min_separation_samples=256)
        per_core = delays[::2]
        assert len(np.unique(per_core)) == 12
        assert np.min(np.diff(np.sort(per_core))) >= 256

    def test_delays_are_symbol_aligned(self):
        _, w = self.make_wave()
        _, delays = core_mux_emulate(w, 8, Seed(23), sps=2)
        assert np.all(delays % 2 == 0)

    def test_cross_correlation_low(self):
        f, w = self.make_wave()
        out, delays = core_mux_emulate(w, 8, Seed(24))
        ref = f.replicated(8).rolled(delays // 2)
        s = ref.symbols
        for a in range(0, 8, 2):
            for b in range(a + 2, 8, 2):
                rho = np.abs(np.vdot(s[a], s[b])) / (
                    np.linalg.norm(s[a]) * np.linalg.norm(s[b])
                )
                assert rho < 0.1

    def test_budget_error(self):
        _, w = self.make_wave(n=1024)
        with pytest.raises(ConfigError):
            core_mux_emulate(w, 24, Seed(25), min_separation_samples=512)

    def test_odd_channel_count_rejected(self):
        _, w = self.make_wave()
        with pytest.raises(ValueError):
            core_mux_emulate(w, 7, Seed(26))


class TestWdmAssemble:
    def make_sut(self, sps=4):
        c = mb_shape(4.688)
        f = draw_frame(Seed(30), c, 2, 4096, 0.0)
        return rrc_modulate(f, sps=sps, rolloff=0.05)

    def test_single_channel_is_identity(self):
        sut = self.make_sut()
        out = wdm_assemble(sut, Seed(31), n_channels=1)
        np.testing.assert_array_equal(out.samples, sut.samples)

    def test_dummy_power_matches_sut(self):
        sut = self.make_sut()
        out = wdm_assemble(sut, Seed(32), n_channels=31)
        freq = sut.frequencies()
        spec = np.abs(np.fft.fft(out.samples[0])) ** 2
        def slot_power(center):
            sel = np.abs(freq - center) < 70e9
            return spec[sel].sum()
        p0 = slot_power(0.0)
        for center in (-150e9, 150e9):
            assert 10 * np.abs(np.log10(slot_power(center) / p0)) < 0.1 * 10

    def test_band_arithmetic(self):
        # 31 slots at 150 GHz occupy 4.65 THz
        assert 31 * 150e9 == pytest.approx(4.65e12)

    def test_sample_rate_guard(self):
        sut = self.make_sut(sps=2)  # 280 GHz cannot hold the dummies
        with pytest.raises(ConfigError):
            wdm_assemble(sut, Seed(33), n_channels=3)

    def test_narrow_grid_rejected(self):
        sut = self.make_sut()
        with pytest.raises(ConfigError):
            wdm_assemble(sut, Seed(34), n_channels=3, grid_hz=120e9)

    def test_optional_noise_floor(self):
        sut = self.make_sut()
        out = wdm_assemble(sut, Seed(35), n_channels=31, dummy_osnr_db=20.0)
        # floor raises total power by roughly the configured fraction
        extra = out.channel_power() - wdm_assemble(
            sut, Seed(35), n_channels=31
        ).channel_power()
        assert np.all(extra > 0)


class TestPhaseNoise:
    def test_zero_linewidth_identity(self):
        sut = TestWdmAssemble().make_sut()
        out = add_phase_noise(sut, 0.0, Seed(40))
        np.testing.assert_array_equal(out.samples, sut.samples)

    def test_phase_walk_variance(self):
        n = 1 << 16
        fs = 280e9
        wave_in = np.ones((1, n), dtype=complex)
        from ccfsim.core import MultiChannelWaveform

        out = add_phase_noise(MultiChannelWaveform(wave_in, fs), 10e3, Seed(41))
        phase = np.unwrap(np.angle(out.samples[0]))
        increments = np.diff(phase)
        expected_var = 2 * np.pi * 10e3 / fs
        assert np.var(increments) == pytest.approx(expected_var, rel=0.1)
        # magnitude untouched
        np.testing.assert_allclose(np.abs(out.samples), 1.0, atol=1e-12)
