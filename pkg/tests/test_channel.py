import numpy as np
import pytest
from scipy import stats

from ccfsim.calibration import (
    ir_rms_width_ps,
    mdl_accumulation_samples,
    mdl_accumulation_table,
    measure_delay_scale,
)
from ccfsim.channel import (
    LinkConfig,
    apply_link,
    build_link,
    delay_scale_calibration,
    draw_mdl_log_gains,
    draw_section,
    expected_ase_snr_db,
    link_transfer,
)
from ccfsim.core import MultiChannelWaveform, Seed, fft_bin_frequencies
from ccfsim.errors import ConfigError
from ccfsim.metrics import rms_mdl


def small_config(**kw):
    base = dict(
        spans=2,
        span_length_km=53.5,
        sections_per_span=8,
        n_modes=4,
        sigma_g_db=0.35,
    )
    base.update(kw)
    return LinkConfig(**base)


class TestDrawSection:
    def test_zero_smd_gives_zero_delays(self):
        sec = draw_section(Seed(1, (0,)), 4, 1.0, 0.0)
        np.testing.assert_array_equal(sec.delays_ps, 0.0)
        np.testing.assert_allclose(
            sec.coupling.conj().T @ sec.coupling, np.eye(4), atol=1e-9
        )

    def test_seeded_determinism(self):
        a = draw_section(Seed(9, ("s", 1)), 4, 1.0, 5.3)
        b = draw_section(Seed(9, ("s", 1)), 4, 1.0, 5.3)
        np.testing.assert_array_equal(a.coupling, b.coupling)
        np.testing.assert_array_equal(a.delays_ps, b.delays_ps)

    def test_delays_mean_removed(self):
        sec = draw_section(Seed(2, (0,)), 8, 2.0, 5.3)
        assert abs(sec.delays_ps.mean()) < 1e-12

    def test_too_few_modes(self):
        with pytest.raises(ValueError):
            draw_section(Seed(0), 1, 1.0, 5.3)

    def test_delay_std_scaling(self):
        # std scales with calibration * smd * sqrt(length); check by ensemble
        draws = np.concatenate(
            [
                draw_section(Seed(3, (k,)), 6, 4.0, 5.3, calibration=1.0).delays_ps
                for k in range(400)
            ]
        )
        expected = 5.3 * 2.0 * np.sqrt(5.0 / 6.0)  # mean removal shrinks the std
        assert np.std(draws) == pytest.approx(expected, rel=0.05)


class TestMdlDraw:
    def test_zero_sigma(self):
        np.testing.assert_array_equal(draw_mdl_log_gains(Seed(0), 8, 0.0), 0.0)

    def test_exact_normalization(self):
        g = draw_mdl_log_gains(Seed(4, ("m",)), 24, 0.35)
        assert abs(g.mean()) < 1e-12
        assert np.sqrt(np.mean(g**2)) == pytest.approx(0.35, abs=1e-12)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            draw_mdl_log_gains(Seed(0), 4, -0.1)


class TestBuildLink:
    def test_single_span_length(self):
        link = build_link(small_config(spans=1), Seed(0))
        assert link.total_length_km == pytest.approx(53.5)

    def test_nineteen_spans_reach_1017km(self):
        link = build_link(small_config(spans=19), Seed(0))
        assert link.total_length_km == pytest.approx(1016.5)
        assert round(link.total_length_km) == 1016  # ~1017 km line

    def test_zero_spans_rejected(self):
        with pytest.raises(ConfigError):
            build_link(small_config(spans=0), Seed(0))

    def test_negative_loss_rejected(self):
        with pytest.raises(ConfigError):
            build_link(small_config(fiber_loss_db_per_km=-1.0), Seed(0))

    def test_span_budget_consistency(self):
        link = build_link(small_config(spans=1), Seed(1))
        span = link.spans[0]
        assert span.total_loss_db == pytest.approx(12.1)
        assert span.amp_gain_db == pytest.approx(12.1)
        assert span.lumped_loss_db == pytest.approx(12.1 - 0.176 * 53.5)

    def test_loop_reuse_shares_realization(self):
        link = build_link(small_config(spans=4, loop_reuse=True), Seed(5))
        assert link.spans[0] is link.spans[1]
        assert link.loop_phases is not None and len(link.loop_phases) == 4


class TestLinkTransfer:
    def test_unitary_when_mdl_off(self):
        link = build_link(small_config(sigma_g_db=0.0), Seed(6))
        grid = fft_bin_frequencies(64, 280e9)
        t = link_transfer(link, grid)
        assert t.unitarity_error() < 1e-8

    def test_singular_values_unity_without_mdl(self):
        link = build_link(small_config(sigma_g_db=0.0, spans=3), Seed(7))
        t = link_transfer(link, fft_bin_frequencies(32, 280e9))
        sv = np.linalg.svd(t.matrices, compute_uv=False)
        np.testing.assert_allclose(sv, 1.0, atol=1e-8)

    def test_two_mode_closed_form(self):
        # single section, identity coupling, delays (+tau, -tau)
        from ccfsim.channel import FiberSection, LinkRealization, SpanRealization

        tau = 3.0  # ps
        sec = FiberSection(np.eye(2, dtype=complex), np.array([tau, -tau]), 1.0)
        span = SpanRealization([sec], 1.0, 0.0, 0.0, np.zeros(2), 0.0, 5.0)
        link = LinkRealization([span], 0.0, 0.0, 2)
        grid = fft_bin_frequencies(16, 100e9)
        t = link_transfer(link, grid)
        expect0 = np.exp(-2j * np.pi * grid * tau * 1e-12)
        np.testing.assert_allclose(t.matrices[:, 0, 0], expect0, atol=1e-12)
        np.testing.assert_allclose(t.matrices[:, 1, 1], expect0.conj(), atol=1e-12)
        np.testing.assert_allclose(t.matrices[:, 0, 1], 0.0, atol=1e-15)

    def test_loop_reuse_transfer_matches_apply(self):
        # the recirculation phases are frozen in the realization
        link = build_link(small_config(spans=3, loop_reuse=True), Seed(8))
        grid = fft_bin_frequencies(8, 280e9)
        a = link_transfer(link, grid).matrices
        b = link_transfer(link, grid).matrices
        np.testing.assert_array_equal(a, b)


class TestApplyLink:
    def test_channel_count_mismatch(self):
        link = build_link(small_config(), Seed(0))
        wave = MultiChannelWaveform(np.zeros((2, 64)), 280e9)
        with pytest.raises(ValueError):
            apply_link(wave, link, Seed(1))

    def test_energy_conserved_noiseless(self):
        link = build_link(small_config(sigma_g_db=0.0), Seed(9))
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 4096)) + 1j * rng.standard_normal((4, 4096))
        wave = MultiChannelWaveform(x, 280e9)
        out = apply_link(wave, link, Seed(2), add_ase=False)
        p_in = wave.channel_power().sum()
        p_out = out.channel_power().sum()
        assert abs(p_out - p_in) / p_in < 1e-6

    def test_impulse_spread_matches_section_delays(self):
        cfg = small_config(spans=1, sections_per_span=1, sigma_g_db=0.0, beta2_ps2_km=0.0)
        link = build_link(cfg, Seed(11))
        delays = link.spans[0].sections[0].delays_ps
        fs = 280e9
        n = 512
        x = np.zeros((4, n), dtype=complex)
        x[:, 0] = 1.0
        out = apply_link(MultiChannelWaveform(x, fs), link, Seed(3), add_ase=False)
        # energy concentrates within the drawn delay range
        prof = np.sum(np.abs(out.samples) ** 2, axis=0)
        t_ps = np.fft.fftfreq(n, d=1.0) * n / fs * 1e12
        spread = np.sqrt(np.sum(prof * t_ps**2) / np.sum(prof))
        assert spread < np.abs(delays).max() + 2e12 / fs

    def test_received_snr_matches_ase_budget(self):
        cfg = small_config(spans=19, sections_per_span=2, sigma_g_db=0.0)
        link = build_link(cfg, Seed(12))
        fs = 280e9
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 1 << 15)) + 1j * rng.standard_normal((4, 1 << 15))
        x /= np.sqrt(2.0)
        wave = MultiChannelWaveform(x, fs)
        noiseless = apply_link(wave, link, Seed(4), add_ase=False)
        noisy = apply_link(wave, link, Seed(4), add_ase=True)
        noise_power = np.mean(np.abs(noisy.samples - noiseless.samples) ** 2)
        snr_db = 10 * np.log10(1.0 / noise_power)
        assert snr_db == pytest.approx(expected_ase_snr_db(cfg, fs), abs=0.2)

    def test_noiseless_unitary_preserves_snr(self):
        # a unitary link neither adds nor removes in-band noise
        cfg = small_config(sigma_g_db=0.0)
        link = build_link(cfg, Seed(13))
        rng = np.random.default_rng(2)
        sig = rng.standard_normal((4, 4096)) + 1j * rng.standard_normal((4, 4096))
        noise = rng.standard_normal((4, 4096)) + 1j * rng.standard_normal((4, 4096))
        out_sig = apply_link(MultiChannelWaveform(sig, 280e9), link, Seed(5), add_ase=False)
        out_both = apply_link(
            MultiChannelWaveform(sig + 0.1 * noise, 280e9), link, Seed(5), add_ase=False
        )
        p_noise_out = np.mean(np.abs(out_both.samples - out_sig.samples) ** 2)
        assert p_noise_out == pytest.approx(0.01 * 2.0, rel=0.1)


class TestSmdCalibration:
    def test_analytic_constant(self):
        assert delay_scale_calibration(4) == pytest.approx(np.sqrt(4 / 3))
        assert delay_scale_calibration(24) == pytest.approx(np.sqrt(24 / 23))

    def test_monte_carlo_recovers_constant(self):
        # oracle run on unscaled links returns the correction factor
        result = measure_delay_scale(Seed(0xCAFE), n_modes=4, trials=120)
        assert result["delay_scale"] == pytest.approx(np.sqrt(4 / 3), rel=0.03)

    def test_calibrated_width_hits_target(self):
        cfg = LinkConfig(
            spans=1,
            span_length_km=100.0,
            sections_per_span=100,
            n_modes=4,
            sigma_g_db=0.0,
            fiber_loss_db_per_km=0.0,
            span_loss_db=0.0,
        )
        widths = [
            ir_rms_width_ps(build_link(cfg, Seed(21, (t,))))
            for t in range(120)
        ]
        measured = np.sqrt(np.mean(np.square(widths)))
        assert measured == pytest.approx(53.0, rel=0.03)  # 5.3 * sqrt(100)


class TestSmdScalingLaw:
    def test_sqrt_length_exponent(self):
        # desk-scale smoke version of the acceptance criterion
        from ccfsim.metrics import fit_power_law

        lengths = [53.5, 214.0, 428.0, 1016.5]
        points = []
        for L in lengths:
            spans = max(1, round(L / 53.5))
            cfg = small_config(spans=spans, sections_per_span=6, sigma_g_db=0.0)
            widths = [
                ir_rms_width_ps(build_link(cfg, Seed(31, (spans, t))), n_bins=32)
                for t in range(25)
            ]
            points.append((L, float(np.sqrt(np.mean(np.square(widths))))))
        alpha, _, r2 = fit_power_law(points)
        assert 0.45 <= alpha <= 0.55
        assert r2 > 0.95


class TestMdlAccumulation:
    def test_sigma_rms_single_span_equals_sigma_g(self):
        link = build_link(small_config(spans=1), Seed(41))
        t = link_transfer(link, fft_bin_frequencies(16, 280e9), include_cd=False)
        assert rms_mdl(t) == pytest.approx(0.35, abs=1e-9)

    def test_mean_grows_at_least_sqrt_k(self):
        table = mdl_accumulation_table(
            Seed(0xBEEF), (1, 4, 8), n_modes=8, sigma_g_db=0.35, trials=150
        )
        assert table[1] == pytest.approx(1.0, abs=1e-9)
        assert table[4] >= 2.0 * 0.98
        assert table[8] >= np.sqrt(8.0) * 0.98

    def test_full_model_matches_reduced_oracle_distribution(self):
        # per-bin sigma_rms from the full sectioned link vs the reduced
        # span model; identical by Haar invariance (two-sample KS)
        trials = 80
        sim = []
        for t in range(trials):
            link = build_link(
                small_config(spans=4, sections_per_span=3), Seed(51, (t,))
            )
            tr = link_transfer(link, np.array([0.0]), include_cd=False)
            sim.append(rms_mdl(tr))
        oracle = mdl_accumulation_samples(
            Seed(0xFEED), (4,), n_modes=4, sigma_g_db=0.35, trials=trials
        )[4]
        _, p = stats.ks_2samp(sim, oracle)
        assert p > 0.01
