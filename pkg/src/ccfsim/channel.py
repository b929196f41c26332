"""Linear coupled-core fiber link model.

A link is an ordered list of spans; each span is a chain of short sections
(Haar-random unitary coupling plus zero-mean per-mode group delays), one
lumped mode-dependent-gain stage, scalar loss and a transparent amplifier.
Chromatic dispersion is applied once as a scalar quadratic phase common to
all modes.  Evaluating a realization on an FFT frequency grid yields the
end-to-end transfer matrix from which memory length and rms MDL statistics
are estimated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ASE_REFERENCE_HZ,
    PLANCK_J_S,
    MultiChannelWaveform,
    Seed,
    SpectralTransfer,
    db_to_linear,
    haar_unitary,
)
from .errors import ConfigError

# Frequency-chunk size for transfer-matrix evaluation, keeps peak memory at
# ~chunk * s^2 complex values regardless of waveform length.
_FREQ_CHUNK = 16384


def delay_scale_calibration(n_modes: int) -> float:
    """Scale constant mapping the fiber SMD coefficient to per-section delay std.

    With per-section delays drawn i.i.d. Gaussian and mean-removed across the
    n_modes modes, the ensemble rms width of the link intensity impulse
    response is sqrt((n-1)/n) * smd_coeff * sqrt(L); the factor below cancels
    that bias so the measured width matches smd_coeff * sqrt(L).  Verified by
    the Monte Carlo oracle in the calibration module.
    """
    if n_modes < 2:
        raise ValueError("need at least 2 modes")
    return float(np.sqrt(n_modes / (n_modes - 1.0)))


@dataclass
class FiberSection:
    """One strongly-coupled segment: unitary coupling plus per-mode delays."""

    coupling: np.ndarray  # (s, s) unitary
    delays_ps: np.ndarray  # (s,) zero-mean group delays
    section_length_km: float

    def __post_init__(self):
        self.coupling = np.asarray(self.coupling, dtype=np.complex128)
        self.delays_ps = np.asarray(self.delays_ps, dtype=float)
        if self.coupling.shape != (self.delays_ps.size, self.delays_ps.size):
            raise ValueError("coupling shape must match delay count")


@dataclass
class SpanRealization:
    sections: list  # of FiberSection
    span_length_km: float
    fiber_loss_db_per_km: float
    lumped_loss_db: float  # fan-in/out, splices, connectors
    mdl_log_gains_db: np.ndarray  # (s,) zero-mean, rms = sigma_g
    amp_gain_db: float
    amp_noise_figure_db: float

    @property
    def total_loss_db(self) -> float:
        return self.fiber_loss_db_per_km * self.span_length_km + self.lumped_loss_db


@dataclass
class LinkRealization:
    spans: list  # of SpanRealization
    smd_coeff_ps_sqrt_km: float
    beta2_ps2_km: float  # chromatic dispersion
    n_modes: int
    core_skew_ps: np.ndarray | None = None  # optional static per-core skew
    loop_phases: list | None = None  # per-recirculation mode phases (loop reuse)

    @property
    def total_length_km(self) -> float:
        return sum(s.span_length_km for s in self.spans)

    @property
    def n_spans(self) -> int:
        return len(self.spans)


@dataclass
class LinkConfig:
    """Transmission-line parameters; defaults follow the measured field line."""

    spans: int = 19
    span_length_km: float = 53.5
    sections_per_span: int = 50
    n_modes: int = 24  # 12 cores x 2 polarizations
    smd_coeff_ps_sqrt_km: float = 5.3
    sigma_g_db: float = 0.35  # rms mode-dependent gain per span
    fiber_loss_db_per_km: float = 0.176
    span_loss_db: float = 12.1  # total incl. fan-in/out and connectors
    amp_noise_figure_db: float = 5.0
    beta2_ps2_km: float = -21.7  # D ~ 17 ps/nm/km at 1550 nm
    launch_power_dbm_per_channel: float = 17.0  # 20 dBm/core split over 2 pols
    loop_reuse: bool = False  # recirculate one span realization
    delay_scale: float | None = None  # None -> analytic calibration for n_modes
    core_skew_ps: tuple | None = None  # optional static skew per core

    def validate(self) -> "LinkConfig":
        if self.spans < 1:
            raise ConfigError(f"spans must be >= 1, got {self.spans}")
        if self.sections_per_span < 1:
            raise ConfigError("sections_per_span must be >= 1")
        if self.n_modes < 2 or self.n_modes % 2:
            raise ConfigError("n_modes must be an even number >= 2")
        if self.span_length_km <= 0:
            raise ConfigError("span_length_km must be positive")
        if self.smd_coeff_ps_sqrt_km < 0 or self.sigma_g_db < 0:
            raise ConfigError("smd coefficient and sigma_g must be >= 0")
        if self.fiber_loss_db_per_km < 0 or self.span_loss_db < 0:
            raise ConfigError("losses must be >= 0")
        if self.span_loss_db < self.fiber_loss_db_per_km * self.span_length_km:
            raise ConfigError("span_loss_db is smaller than the distributed fiber loss")
        if self.core_skew_ps is not None and len(self.core_skew_ps) * 2 != self.n_modes:
            raise ConfigError("core_skew_ps needs one entry per core")
        return self


def draw_section(
    seed: Seed,
    n_modes: int,
    section_length_km: float,
    smd_coeff_ps_sqrt_km: float,
    calibration: float | None = None,
) -> FiberSection:
    """Draw one section: Haar-uniform coupling and Gaussian mean-removed delays.

    Per-section delay std is calibration * smd_coeff * sqrt(section_length) so
    the link-level impulse-response width reproduces smd_coeff * sqrt(L).
    """
    if n_modes < 2:
        raise ValueError("coupling requires at least 2 modes")
    if section_length_km <= 0:
        raise ValueError("section_length_km must be positive")
    if calibration is None:
        calibration = delay_scale_calibration(n_modes)
    rng = seed.rng()
    coupling = haar_unitary(rng, n_modes)
    sigma_s = calibration * smd_coeff_ps_sqrt_km * np.sqrt(section_length_km)
    delays = rng.standard_normal(n_modes) * sigma_s
    delays -= delays.mean()
    return FiberSection(coupling, delays, section_length_km)


def draw_mdl_log_gains(seed: Seed, n_modes: int, sigma_g_db: float) -> np.ndarray:
    """Zero-mean log gains (dB) normalized to rms exactly sigma_g.

    Applied as a diagonal amplitude matrix 10^(g/20); the Haar eigenbasis is
    supplied by the random coupling of the adjacent sections, so no separate
    rotation is stored.
    """
    if sigma_g_db < 0:
        raise ValueError("sigma_g_db must be >= 0")
    if sigma_g_db == 0.0:
        return np.zeros(n_modes)
    rng = seed.rng()
    g = rng.standard_normal(n_modes)
    g -= g.mean()
    g *= sigma_g_db / np.sqrt(np.mean(g**2))
    return g


def _draw_span(seed: Seed, config: LinkConfig, calibration: float) -> SpanRealization:
    section_length = config.span_length_km / config.sections_per_span
    sections = [
        draw_section(
            seed.child("section", k),
            config.n_modes,
            section_length,
            config.smd_coeff_ps_sqrt_km,
            calibration,
        )
        for k in range(config.sections_per_span)
    ]
    gains = draw_mdl_log_gains(seed.child("mdl"), config.n_modes, config.sigma_g_db)
    lumped = config.span_loss_db - config.fiber_loss_db_per_km * config.span_length_km
    return SpanRealization(
        sections=sections,
        span_length_km=config.span_length_km,
        fiber_loss_db_per_km=config.fiber_loss_db_per_km,
        lumped_loss_db=lumped,
        mdl_log_gains_db=gains,
        amp_gain_db=config.span_loss_db,  # transparent link
        amp_noise_figure_db=config.amp_noise_figure_db,
    )


def build_link(config: LinkConfig, seed: Seed) -> LinkRealization:
    """Draw a full link realization from hierarchical seed streams."""
    config.validate()
    calibration = (
        config.delay_scale
        if config.delay_scale is not None
        else delay_scale_calibration(config.n_modes)
    )
    if config.loop_reuse:
        # one physical span recirculated; fresh random per-mode phase per pass
        base = _draw_span(seed.child("span", 0), config, calibration)
        spans = [base] * config.spans
        rng = seed.child("loop-phase").rng()
        loop_phases = [
            np.exp(2j * np.pi * rng.random(config.n_modes)) for _ in range(config.spans)
        ]
    else:
        spans = [
            _draw_span(seed.child("span", k), config, calibration)
            for k in range(config.spans)
        ]
        loop_phases = None
    skew = None
    if config.core_skew_ps is not None:
        skew = np.repeat(np.asarray(config.core_skew_ps, dtype=float), 2)
    return LinkRealization(
        spans=spans,
        smd_coeff_ps_sqrt_km=config.smd_coeff_ps_sqrt_km,
        beta2_ps2_km=config.beta2_ps2_km,
        n_modes=config.n_modes,
        core_skew_ps=skew,
        loop_phases=loop_phases,
    )


def _evaluate_transfer(
    link: LinkRealization,
    freqs: np.ndarray,
    include_cd: bool = True,
    include_loss: bool = True,
) -> np.ndarray:
    """H(f) for one chunk of frequencies; shape (f, s, s)."""
    s = link.n_modes
    f = freqs[:, None]  # Hz
    out = np.broadcast_to(np.eye(s, dtype=np.complex128), (freqs.size, s, s)).copy()
    for k, span in enumerate(link.spans):
        for sec in span.sections:
            phase = np.exp(-2e-12j * np.pi * f * sec.delays_ps[None, :])
            out = sec.coupling[None] @ (phase[:, :, None] * out)
        amp = (10.0 ** (span.mdl_log_gains_db / 20.0)).astype(complex)
        if link.loop_phases is not None:
            amp = amp * link.loop_phases[k]
        out *= amp[None, :, None]
        if include_loss:
            # distributed + lumped loss compensated by the span amplifier
            net_db = span.amp_gain_db - span.total_loss_db
            out *= 10.0 ** (net_db / 20.0)
    if link.core_skew_ps is not None:
        phase = np.exp(-2e-12j * np.pi * f * link.core_skew_ps[None, :])
        out *= phase[:, :, None]
    if include_cd:
        # scalar quadratic phase, common to all modes
        b2l = link.beta2_ps2_km * 1e-24 * link.total_length_km  # s^2
        out *= np.exp(-0.5j * b2l * (2.0 * np.pi * freqs) ** 2)[:, None, None]
    return out


def link_transfer(
    link: LinkRealization, freq_grid: np.ndarray, include_cd: bool = True
) -> SpectralTransfer:
    """Evaluate the end-to-end transfer matrix on an FFT frequency grid."""
    freqs = np.asarray(freq_grid, dtype=float)
    chunks = [
        _evaluate_transfer(link, freqs[i : i + _FREQ_CHUNK], include_cd, True)
        for i in range(0, freqs.size, _FREQ_CHUNK)
    ]
    return SpectralTransfer(freqs, np.concatenate(chunks, axis=0))


def ase_power_per_channel(
    noise_figure_db: float, gain_db: float, sample_rate: float
) -> float:
    """ASE power (relative to 1 W) added per channel per span across the
    simulated bandwidth, for one amplifier of the given gain and noise figure."""
    nf = db_to_linear(noise_figure_db)
    g = db_to_linear(gain_db)
    return (nf * g - 1.0) * PLANCK_J_S * ASE_REFERENCE_HZ * (sample_rate / 2.0)


def expected_ase_snr_db(config: LinkConfig, sample_rate: float) -> float:
    """Analytic signal-to-ASE ratio (dB) in the full simulated bandwidth."""
    p_sig_w = 1e-3 * db_to_linear(config.launch_power_dbm_per_channel)
    per_span = ase_power_per_channel(
        config.amp_noise_figure_db, config.span_loss_db, sample_rate
    )
    return float(10.0 * np.log10(p_sig_w / (config.spans * per_span)))


def apply_link(
    wave: MultiChannelWaveform,
    link: LinkRealization,
    seed: Seed,
    launch_power_dbm_per_channel: float = 17.0,
    add_ase: bool = True,
) -> MultiChannelWaveform:
    """Propagate a waveform through a link realization.

    The waveform is multiplied by the link transfer matrix in the frequency
    domain; circular-complex Gaussian ASE from the per-span amplifiers is then
    added, scaled against the configured launch power (waveforms are kept at
    unit mean channel power, so noise enters as a relative variance).
    """
    if wave.n_channels != link.n_modes:
        raise ValueError(
            f"waveform has {wave.n_channels} channels, link couples {link.n_modes} modes"
        )
    freqs = wave.frequencies()
    spec = wave.spectrum()
    for i in range(0, freqs.size, _FREQ_CHUNK):
        h = _evaluate_transfer(link, freqs[i : i + _FREQ_CHUNK], True, True)
        spec[:, i : i + _FREQ_CHUNK] = np.einsum(
            "fij,jf->if", h, spec[:, i : i + _FREQ_CHUNK]
        )
    out = np.fft.ifft(spec, axis=1)

    if add_ase:
        p_signal_w = 1e-3 * db_to_linear(launch_power_dbm_per_channel)
        var = 0.0
        for span in link.spans:
            var += ase_power_per_channel(
                span.amp_noise_figure_db, span.amp_gain_db, wave.sample_rate
            )
        rel_var = var / p_signal_w  # noise variance relative to unit signal power
        rng = seed.child("ase").rng()
        noise = rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape)
        out = out + np.sqrt(rel_var / 2.0) * noise

    return wave.with_samples(out).validate()
