"""Transmit-side DSP: shaped constellation, symbol frames, root-raised-cosine
modulation, delay-decorrelated core multiplexing and WDM dummy bands.

The source is an ideal i.i.d. sampler from the Maxwell-Boltzmann distribution;
distribution-matching rate loss is outside the model, so rate accounting is
done analytically from entropy and GMI downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MultiChannelWaveform, Seed, fft_bin_frequencies
from .errors import ConfigError

SYMBOL_RATE_HZ = 140e9
WDM_GRID_HZ = 150e9
TARGET_ENTROPY_2D = 4.688
MAX_ROLLOFF = WDM_GRID_HZ / SYMBOL_RATE_HZ - 1.0  # grid occupancy limit


def truncated_36qam_points() -> np.ndarray:
    """The 6x6 odd-integer grid {+-1,+-3,+-5}^2, unnormalized.

    These are the 36 lowest-energy points of the 64QAM grid with the energy-50
    tie broken toward the square grid; every dropped point has a +-7
    coordinate.
    """
    coords = np.array([-5.0, -3.0, -1.0, 1.0, 3.0, 5.0])
    return (coords[:, None] + 1j * coords[None, :]).ravel()


@dataclass
class ShapedConstellation:
    """36-point truncated QAM with Maxwell-Boltzmann probabilities."""

    points: np.ndarray  # unit mean energy under probs
    probs: np.ndarray
    nu: float  # Maxwell-Boltzmann rate parameter
    entropy_2d: float  # bits

    @property
    def bits_per_symbol(self) -> float:
        """log2 of the constellation order (uncoded bit budget per 2D)."""
        return float(np.log2(self.points.size))

    def mean_energy(self) -> float:
        return float(np.sum(self.probs * np.abs(self.points) ** 2))


def _mb_probs(nu: float, energies: np.ndarray) -> np.ndarray:
    # shifting by the minimum energy leaves the distribution unchanged and
    # keeps the weights finite at large nu
    w = np.exp(-nu * (energies - energies.min()))
    return w / w.sum()


def _entropy_bits(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-np.sum(p * np.log2(p)))


def mb_shape(target_entropy_2d: float = TARGET_ENTROPY_2D, tol: float = 1e-9) -> ShapedConstellation:
    """Find the Maxwell-Boltzmann distribution with the requested 2D entropy.

    Probabilities follow exp(-nu * |x|^2) on the unnormalized grid; nu is
    bisected until the entropy matches the target, then the points are scaled
    to unit mean energy under the resulting distribution.
    """
    points = truncated_36qam_points()
    energies = np.abs(points) ** 2
    max_entropy = np.log2(points.size)
    # entropy(nu) decreases from log2(36) to log2(4) (the lowest-energy ring)
    if not 0.0 < target_entropy_2d <= max_entropy:
        raise ValueError(
            f"target entropy {target_entropy_2d} outside (0, {max_entropy:.6f}]"
        )
    if abs(target_entropy_2d - max_entropy) < tol:
        nu = 0.0
    else:
        lo, hi = 0.0, 1.0
        while _entropy_bits(_mb_probs(hi, energies)) > target_entropy_2d:
            hi *= 2.0
            if hi > 1e6:
                raise ValueError(
                    f"target entropy {target_entropy_2d} not reachable by "
                    "Maxwell-Boltzmann shaping on this constellation"
                )
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if _entropy_bits(_mb_probs(mid, energies)) > target_entropy_2d:
                lo = mid
            else:
                hi = mid
        nu = 0.5 * (lo + hi)
        # polish with a few secant steps for entropy accuracy beyond bisection
        for _ in range(4):
            h = _entropy_bits(_mb_probs(nu, energies))
            dh = (_entropy_bits(_mb_probs(nu + 1e-9, energies)) - h) / 1e-9
            if dh == 0.0:
                break
            nu -= (h - target_entropy_2d) / dh
        nu = max(nu, 0.0)
    probs = _mb_probs(nu, energies)
    scale = 1.0 / np.sqrt(np.sum(probs * energies))
    return ShapedConstellation(
        points=points * scale,
        probs=probs,
        nu=nu,
        entropy_2d=_entropy_bits(probs),
    )


PILOT_POINTS = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)


@dataclass
class SymbolFrame:
    """Per-channel symbol streams with deterministic pilot positions.

    pilot_mask is (m,) for frames straight from the source; replication and
    per-channel delays turn it into a (channels, m) mask.
    """

    symbols: np.ndarray  # (channels, m) complex
    pilot_mask: np.ndarray  # (m,) or (channels, m) bool
    symbol_rate: float = SYMBOL_RATE_HZ

    @property
    def n_channels(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.symbols.shape[1]

    def channel_pilot_mask(self) -> np.ndarray:
        """Pilot mask broadcast to (channels, m)."""
        mask = np.atleast_2d(self.pilot_mask)
        return np.broadcast_to(mask, self.symbols.shape) if mask.shape[0] == 1 else mask

    def replicated(self, n_channels: int) -> "SymbolFrame":
        """Tile the channel pair/row set up to n_channels."""
        reps = -(-n_channels // self.n_channels)
        sym = np.tile(self.symbols, (reps, 1))[:n_channels]
        mask = np.tile(self.channel_pilot_mask(), (reps, 1))[:n_channels]
        return SymbolFrame(sym, mask, self.symbol_rate)

    def rolled(self, shifts) -> "SymbolFrame":
        """Circularly delay each channel (and its pilots) by shifts[c] symbols."""
        mask = self.channel_pilot_mask()
        sym = np.stack([np.roll(self.symbols[c], int(s)) for c, s in enumerate(shifts)])
        msk = np.stack([np.roll(mask[c], int(s)) for c, s in enumerate(shifts)])
        return SymbolFrame(sym, msk, self.symbol_rate)


def draw_frame(
    seed: Seed,
    constellation: ShapedConstellation,
    n_channels: int,
    n_symbols: int,
    pilot_rate: float = 0.0,
) -> SymbolFrame:
    """I.i.d. shaped symbols per channel with pilots every 1/pilot_rate slots."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    if not 0.0 <= pilot_rate < 1.0:
        raise ValueError("pilot_rate must be in [0, 1)")
    rng = seed.rng()
    idx = rng.choice(constellation.points.size, size=(n_channels, n_symbols), p=constellation.probs)
    symbols = constellation.points[idx]
    pilot_mask = np.zeros(n_symbols, dtype=bool)
    if pilot_rate > 0.0:
        spacing = int(np.floor(1.0 / pilot_rate))
        pilot_mask[::spacing] = True
        n_pilots = int(pilot_mask.sum())
        pilots = PILOT_POINTS[rng.integers(0, 4, size=(n_channels, n_pilots))]
        symbols[:, pilot_mask] = pilots
    return SymbolFrame(symbols, pilot_mask)


def rrc_frequency_response(
    n: int, sample_rate: float, symbol_rate: float, rolloff: float, peak_normalized: bool = True
) -> np.ndarray:
    """Root-raised-cosine amplitude response sampled on the n-point FFT grid.

    Exact frequency sampling keeps the matched cascade Nyquist to numerical
    precision and confines the spectrum strictly to (1+rolloff)*symbol_rate.
    """
    f = np.abs(fft_bin_frequencies(n, sample_rate))
    half = symbol_rate / 2.0
    h = np.zeros(n)
    if rolloff == 0.0:
        h[f <= half] = 1.0
    else:
        f1 = half * (1.0 - rolloff)
        f2 = half * (1.0 + rolloff)
        h[f <= f1] = 1.0
        roll = (f > f1) & (f < f2)
        h[roll] = np.sqrt(
            0.5 * (1.0 + np.cos(np.pi / (rolloff * symbol_rate) * (f[roll] - f1)))
        )
    if peak_normalized:
        h /= np.mean(h)  # time-domain center tap = 1
    return h


def rrc_modulate(
    frame: SymbolFrame,
    sps: int = 2,
    rolloff: float = 0.05,
    normalize_power: bool = True,
) -> MultiChannelWaveform:
    """Upsample a frame and apply the RRC pulse shape (circular convolution).

    The returned waveform has exactly sps * n_symbols samples; with
    normalize_power each channel is scaled to unit mean power.
    """
    if sps < 2:
        raise ValueError("sps must be >= 2 for pulse shaping")
    if not 0.0 < rolloff <= MAX_ROLLOFF + 1e-12:
        raise ConfigError(
            f"rolloff {rolloff} exceeds the {WDM_GRID_HZ/1e9:.0f}-GHz grid limit "
            f"{MAX_ROLLOFF:.4f}"
        )
    s, m = frame.symbols.shape
    n = m * sps
    fs = frame.symbol_rate * sps
    up = np.zeros((s, n), dtype=np.complex128)
    up[:, ::sps] = frame.symbols
    h = rrc_frequency_response(n, fs, frame.symbol_rate, rolloff)
    samples = np.fft.ifft(np.fft.fft(up, axis=1) * h[None, :], axis=1)
    if normalize_power:
        rms = np.sqrt(np.mean(np.abs(samples) ** 2, axis=1, keepdims=True))
        samples = samples / rms
    return MultiChannelWaveform(samples, fs).validate()


def matched_filter(wave: MultiChannelWaveform, symbol_rate: float, rolloff: float = 0.05) -> MultiChannelWaveform:
    """Apply the receive-side RRC (circular), completing the Nyquist cascade."""
    h = rrc_frequency_response(wave.n_samples, wave.sample_rate, symbol_rate, rolloff)
    out = np.fft.ifft(wave.spectrum() * h[None, :], axis=1)
    return wave.with_samples(out)


def add_phase_noise(
    wave: MultiChannelWaveform, linewidth_hz: float, seed: Seed
) -> MultiChannelWaveform:
    """Apply a common Lorentzian (Wiener) laser phase trajectory to all channels."""
    if linewidth_hz <= 0:
        return wave
    rng = seed.rng()
    step_var = 2.0 * np.pi * linewidth_hz / wave.sample_rate
    steps = rng.standard_normal(wave.n_samples) * np.sqrt(step_var)
    phase = np.cumsum(steps)
    phase -= phase[0]
    return wave.with_samples(wave.samples * np.exp(1j * phase)[None, :])


def core_mux_emulate(
    wave: MultiChannelWaveform,
    n_channels: int,
    seed: Seed,
    min_separation_samples: int = 256,
    sps: int = 2,
) -> tuple[MultiChannelWaveform, np.ndarray]:
    """Replicate one X/Y channel pair to all cores with decorrelating delays.

    Emulates the 1-to-many splitter plus delay lines: every core carries the
    same pair, circularly delayed by distinct multiples of the separation so
    symbol streams decorrelate.  Delays are multiples of sps, keeping symbol
    timing integral.  Returns the waveform and the per-channel sample delays.
    """
    if wave.n_channels != 2:
        raise ValueError("core mux expects one X/Y channel pair")
    if n_channels % 2:
        raise ValueError("n_channels must be even (2 per core)")
    n_cores = n_channels // 2
    sep = int(np.ceil(min_separation_samples / sps)) * sps
    delays = np.repeat(np.arange(n_cores) * sep, 2)
    if n_cores > 1:
        # small seeded jitter keeps the spacing irregular but >= sep apart
        rng = seed.rng()
        jitter = rng.integers(0, max(sep // (2 * sps), 1), size=n_cores) * sps
        delays = delays + np.repeat(np.cumsum(jitter), 2)
    if delays.max() >= wave.n_samples:
        raise ConfigError(
            f"delay budget {delays.max()} samples exceeds frame length {wave.n_samples}"
        )
    samples = np.empty((n_channels, wave.n_samples), dtype=np.complex128)
    for c in range(n_channels):
        samples[c] = np.roll(wave.samples[c % 2], delays[c])
    return wave.with_samples(samples), delays


def wdm_assemble(
    sut: MultiChannelWaveform,
    seed: Seed,
    n_channels: int = 31,
    grid_hz: float = WDM_GRID_HZ,
    rolloff: float = 0.05,
    dummy_osnr_db: float | None = None,
) -> MultiChannelWaveform:
    """Add spectrally shaped ASE dummy bands in the slots adjacent to the SUT.

    Only the neighbouring slots are waveform-simulated; the remaining channels
    of the grid enter rate accounting analytically.  Each dummy is RRC-shaped
    complex Gaussian noise, power-matched per channel to the SUT.  An optional
    broadband floor at dummy_osnr_db below the signal emulates finite source
    OSNR.
    """
    occupied = (1.0 + rolloff) * SYMBOL_RATE_HZ
    if grid_hz < occupied:
        raise ConfigError(
            f"grid {grid_hz/1e9:.0f} GHz narrower than occupied bandwidth "
            f"{occupied/1e9:.1f} GHz"
        )
    n_dummies = min(2, n_channels - 1)
    if n_dummies <= 0:
        return sut
    if sut.sample_rate < grid_hz + occupied:
        raise ConfigError(
            "sample rate does not cover the SUT plus adjacent dummy slots; "
            "use a higher sps for WDM assembly"
        )
    rng = seed.rng()
    shape = rrc_frequency_response(
        sut.n_samples, sut.sample_rate, SYMBOL_RATE_HZ, rolloff, peak_normalized=False
    )
    power = sut.channel_power()
    out = sut.samples.copy()
    offsets = [-grid_hz, grid_hz][:n_dummies]
    for offset in offsets:
        noise = rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape)
        spec = np.fft.fft(noise, axis=1) * shape[None, :]
        band = np.fft.ifft(spec, axis=1) * np.exp(2j * np.pi * offset * np.arange(sut.n_samples) / sut.sample_rate)
        band_power = np.mean(np.abs(band) ** 2, axis=1, keepdims=True)
        out = out + band * np.sqrt(power[:, None] / band_power)
    if dummy_osnr_db is not None:
        floor_var = power[:, None] * 10.0 ** (-dummy_osnr_db / 10.0)
        noise = rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape)
        out = out + np.sqrt(floor_var / 2.0) * noise
    return sut.with_samples(out).validate()
