"""Receiver DSP chain: chromatic dispersion compensation, band isolation,
frequency-domain block-adaptive MIMO equalization and pilot-aided carrier
phase recovery.

Equalizer architecture
----------------------
The equalizer is an overlap-save frequency-domain LMS filter operating on
symbol-rate polyphase streams.  Each received channel at `sps` samples per
symbol contributes `sps` polyphase inputs; widely-linear mode adds the
conjugate of every stream, so S channels at 2 samples/symbol give
n_in = 2 * S * 2 inputs driving n_out = S outputs (96x24 at full scale).
Weights live on `fft_size` symbol-spaced frequency bins; with the default
half-block advance the usable filter span is fft_size/2 symbols, centered by
delaying the reference, so group delays of either sign are covered.
Adaptation is data-aided over the leading blocks and decision-directed with
per-block pilot phase tracking afterwards; the step is input-power normalized
per bin.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import MultiChannelWaveform, fft_bin_frequencies
from .errors import AdaptationError
from .txdsp import ShapedConstellation, SymbolFrame

__all__ = [
    "EqualizerConfig",
    "EqualizerState",
    "EqualizedOutput",
    "cd_compensate",
    "isolate_band",
    "widely_linear_compose",
    "fd_mimo_equalize",
    "apply_equalizer",
    "carrier_phase_recover",
    "frame_offset",
]


def cd_compensate(
    wave: MultiChannelWaveform, beta2_ps2_km: float, length_km: float
) -> MultiChannelWaveform:
    """Remove the link's scalar quadratic phase (exact inverse of its CD stage)."""
    if length_km == 0.0:
        return wave
    f = fft_bin_frequencies(wave.n_samples, wave.sample_rate)
    b2l = beta2_ps2_km * 1e-24 * length_km  # s^2
    phase = np.exp(0.5j * b2l * (2.0 * np.pi * f) ** 2)
    out = np.fft.ifft(wave.spectrum() * phase[None, :], axis=1)
    return wave.with_samples(out)


def isolate_band(
    wave: MultiChannelWaveform, target_sample_rate: float
) -> MultiChannelWaveform:
    """Brick-wall band-pass around DC plus resampling to target_sample_rate.

    Emulates the receiver filter that isolates the channel under test from the
    WDM dummies before demodulation.  The target rate must divide the FFT grid
    evenly (integer bin count).
    """
    if target_sample_rate >= wave.sample_rate:
        return wave
    ratio = target_sample_rate / wave.sample_rate
    n_new = int(round(wave.n_samples * ratio))
    if abs(n_new - wave.n_samples * ratio) > 1e-6 or n_new % 2:
        raise ValueError("target rate must map to an even integer bin count")
    spec = wave.spectrum()
    keep = np.concatenate([spec[:, : n_new // 2], spec[:, -n_new // 2 :]], axis=1)
    out = np.fft.ifft(keep, axis=1) * (n_new / wave.n_samples)
    return MultiChannelWaveform(out, target_sample_rate, wave.center_frequency)


def widely_linear_compose(wave: MultiChannelWaveform, sps: int) -> np.ndarray:
    """Stack polyphase streams and their conjugates as independent inputs.

    Returns (2 * channels * sps, n_symbols); the conjugate copies let the
    filter realize widely-linear (conjugate-mixing) responses that a strictly
    linear filter cannot.
    """
    streams = _polyphase_streams(wave.samples, sps)
    return np.concatenate([streams, streams.conj()], axis=0)


def _polyphase_streams(samples: np.ndarray, sps: int) -> np.ndarray:
    s, n = samples.shape
    if n % sps:
        raise ValueError("sample count must be a multiple of sps")
    m = n // sps
    streams = np.empty((s * sps, m), dtype=np.complex128)
    for c in range(s):
        for p in range(sps):
            streams[c * sps + p] = samples[c, p::sps]
    return streams


@dataclass
class EqualizerConfig:
    fft_size: int = 2048  # symbol-spaced frequency bins
    block_advance: int | None = None  # default fft_size // 2 (overlap-save)
    mu: float = 0.5  # NLMS step during data-aided training
    dd_mu_factor: float = 0.1  # step reduction in decision-directed phase
    mode: str = "widely-linear"  # or "strictly-linear"
    sps: int = 2
    train_fraction: float = 0.2
    n_passes: int = 1
    power_forget: float = 0.8  # per-bin input power smoothing
    reference_delay: int | None = None  # default: centered in the filter span
    divergence_factor: float = 1e4  # weight energy ratio triggering abort

    def resolved_advance(self) -> int:
        adv = self.block_advance if self.block_advance is not None else self.fft_size // 2
        if adv < 1 or adv > self.fft_size // 2:
            raise ValueError("block_advance must be in [1, fft_size/2]")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        return adv

    def resolved_delay(self) -> int:
        if self.reference_delay is not None:
            return self.reference_delay
        return (self.fft_size - self.resolved_advance()) // 2


@dataclass
class EqualizerState:
    weights: np.ndarray  # (n_out, n_in, fft_size) complex, frequency domain
    config: EqualizerConfig
    n_out: int
    n_in: int
    power: np.ndarray | None = None  # smoothed per-bin input power

    def taps_time(self) -> np.ndarray:
        """Time-domain taps via the energy-preserving (unitary) inverse FFT."""
        return np.fft.ifft(self.weights, axis=-1, norm="ortho")


@dataclass
class EqualizedOutput:
    symbols: np.ndarray  # (n_out, m), aligned to the reference frame indexing
    residual_snr_db: np.ndarray  # per output channel
    state: EqualizerState
    error_trajectory: np.ndarray  # block-mean |error|^2
    reference_delay: int
    cpr_phases: np.ndarray | None = None

    def taps_time(self) -> np.ndarray:
        return self.state.taps_time()


def _initial_state(config: EqualizerConfig, n_out: int, n_in: int) -> EqualizerState:
    L = config.fft_size
    adv = config.resolved_advance()
    delay = config.resolved_delay()
    if not 0 <= delay < L - adv:
        raise ValueError("reference_delay must fall inside the filter span")
    taps = np.zeros((n_out, n_in, L), dtype=np.complex128)
    for o in range(n_out):
        taps[o, o * config.sps, delay] = 1.0  # polyphase branch 0 passthrough
    weights = np.fft.fft(taps, axis=-1)
    return EqualizerState(weights, config, n_out, n_in)


def _compose_inputs(wave: MultiChannelWaveform, config: EqualizerConfig) -> np.ndarray:
    if config.mode == "widely-linear":
        return widely_linear_compose(wave, config.sps)
    if config.mode == "strictly-linear":
        return _polyphase_streams(wave.samples, config.sps)
    raise ValueError(f"unknown equalizer mode {config.mode!r}")


def _block_filter(weights, x_freq):
    return np.einsum("oif,if->of", weights, x_freq)


def fd_mimo_equalize(
    wave: MultiChannelWaveform,
    reference: SymbolFrame,
    constellation: ShapedConstellation,
    config: EqualizerConfig | None = None,
    eval_fraction: float = 0.5,
) -> EqualizedOutput:
    """Adapt the block frequency-domain MIMO equalizer over one frame.

    Overlap-save blocks advance by `block_advance` symbols; the weight update
    is W += mu * E(f) X*(f) / P(f) with the error from reference symbols over
    the training fraction and from pilot-rotated decisions afterwards.  Raises
    AdaptationError (with the block index) if the weight energy diverges.
    """
    config = config or EqualizerConfig()
    x = _compose_inputs(wave, config)
    n_in, m = x.shape
    n_out = reference.n_channels
    L = config.fft_size
    adv = config.resolved_advance()
    overlap = L - adv
    delay = config.resolved_delay()
    if m < L:
        raise ValueError(f"frame of {m} symbols shorter than fft_size {L}")

    state = _initial_state(config, n_out, n_in)
    w = state.weights
    ref = reference.symbols
    pilot_mask = reference.channel_pilot_mask()
    points = constellation.points

    n_blocks = m // adv
    n_train = max(1, int(np.ceil(config.train_fraction * n_blocks)))
    out = np.zeros((n_out, m), dtype=np.complex128)
    err_power = []
    phases = np.zeros(n_out)
    power = None
    energy0 = float(np.mean(np.abs(w) ** 2))
    eps = 1e-12

    for pass_idx in range(config.n_passes):
        for b in range(n_blocks):
            pos = b * adv
            win = np.arange(pos - overlap, pos + adv) % m
            xb = np.fft.fft(x[:, win], axis=1)
            p_inst = np.sum(np.abs(xb) ** 2, axis=0)
            power = p_inst if power is None else (
                config.power_forget * power + (1.0 - config.power_forget) * p_inst
            )
            yb = np.fft.ifft(_block_filter(w, xb), axis=1)[:, overlap:]

            idx = (np.arange(pos, pos + adv) - delay) % m
            d = ref[:, idx]
            training = b < n_train
            if training:
                target = d
            else:
                # pilot-aided CPR inside the loop: one phase per channel/block
                pmask = pilot_mask[:, idx]
                target = np.empty_like(d)
                for c in range(n_out):
                    pl = pmask[c]
                    if pl.any():
                        rot = np.sum(yb[c, pl] * np.conj(d[c, pl]))
                        if abs(rot) > 0:
                            phases[c] = np.angle(rot)
                    z = yb[c] * np.exp(-1j * phases[c])
                    dec = points[
                        np.argmin(np.abs(z[:, None] - points[None, :]) ** 2, axis=1)
                    ]
                    dec[pl] = d[c, pl]  # pilots are always known
                    target[c] = dec * np.exp(1j * phases[c])
            e = target - yb
            err_power.append(float(np.mean(np.abs(e) ** 2)))

            mu = config.mu if training else config.mu * config.dd_mu_factor
            epad = np.zeros((n_out, L), dtype=np.complex128)
            epad[:, overlap:] = e
            ef = np.fft.fft(epad, axis=1)
            w += mu * np.einsum("of,if->oif", ef, xb.conj()) / (power + eps)[None, None, :]
            # gradient constraint: keep taps inside the filter span
            wt = np.fft.ifft(w, axis=-1)
            wt[:, :, overlap:] = 0.0
            w = np.fft.fft(wt, axis=-1)

            energy = float(np.mean(np.abs(w) ** 2))
            if not np.isfinite(energy) or energy > config.divergence_factor * max(energy0, 1e-12):
                raise AdaptationError(
                    f"equalizer diverged (weight energy {energy:.3e})", block_index=b
                )
            if pass_idx == config.n_passes - 1:
                out[:, idx] = yb

    state.weights = w
    state.power = power

    # residual SNR over the trailing evaluation segment, static gain removed
    n_eval = max(int(eval_fraction * m), adv)
    eval_idx = np.arange(m - n_eval, m)
    snr = np.empty(n_out)
    for c in range(n_out):
        d = ref[c, eval_idx]
        y = out[c, eval_idx]
        gain = np.vdot(d, y) / np.vdot(d, d).real
        noise = np.mean(np.abs(y / gain - d) ** 2)
        snr[c] = 10.0 * np.log10(np.mean(np.abs(d) ** 2) / max(noise, 1e-300))

    return EqualizedOutput(
        symbols=out,
        residual_snr_db=snr,
        state=state,
        error_trajectory=np.asarray(err_power),
        reference_delay=delay,
        cpr_phases=phases.copy(),
    )


def apply_equalizer(
    state: EqualizerState, wave: MultiChannelWaveform, n_symbols: int | None = None
) -> np.ndarray:
    """Run the converged filter over a waveform without adaptation.

    Pure linear (or widely-linear) filtering, output aligned to the reference
    indexing used during adaptation.
    """
    config = state.config
    x = _compose_inputs(wave, config)
    n_in, m = x.shape
    if n_in != state.n_in:
        raise ValueError("waveform shape does not match equalizer inputs")
    L = config.fft_size
    adv = config.resolved_advance()
    overlap = L - adv
    delay = config.resolved_delay()
    out = np.zeros((state.n_out, m), dtype=np.complex128)
    for b in range(m // adv):
        pos = b * adv
        win = np.arange(pos - overlap, pos + adv) % m
        xb = np.fft.fft(x[:, win], axis=1)
        yb = np.fft.ifft(_block_filter(state.weights, xb), axis=1)[:, overlap:]
        idx = (np.arange(pos, pos + adv) - delay) % m
        out[:, idx] = yb
    return out[:, :n_symbols] if n_symbols else out


def carrier_phase_recover(
    symbols: np.ndarray,
    pilot_mask: np.ndarray,
    reference: np.ndarray,
    smoothing_pilots: int = 5,
    variance_warn_threshold: float = 0.5,
) -> tuple[np.ndarray, dict]:
    """Pilot-interpolated carrier phase recovery.

    Per channel, the phase at each pilot is estimated from y * conj(ref),
    smoothed over neighbouring pilots, unwrapped and linearly interpolated to
    every symbol.  Returns the derotated symbols and a report with the phase
    trajectories, residual pilot-phase variance and a low-pilot-SNR flag.
    """
    y = np.atleast_2d(np.asarray(symbols))
    ref = np.atleast_2d(np.asarray(reference))
    mask = np.atleast_2d(np.asarray(pilot_mask, dtype=bool))
    if mask.shape[0] == 1:
        mask = np.broadcast_to(mask, y.shape)
    s, m = y.shape
    out = np.empty_like(y)
    trajectories = np.zeros((s, m))
    variances = np.zeros(s)
    warn = False
    half = max(smoothing_pilots // 2, 0)
    for c in range(s):
        idx = np.flatnonzero(mask[c])
        if idx.size < 2:
            out[c] = y[c]
            continue
        raw = y[c, idx] * np.conj(ref[c, idx])
        if half:
            kernel = np.ones(2 * half + 1)
            smooth = np.convolve(raw, kernel, mode="same") / np.convolve(
                np.ones_like(raw.real), kernel, mode="same"
            )
        else:
            smooth = raw
        ph = np.unwrap(np.angle(smooth))
        traj = np.interp(np.arange(m), idx, ph)
        resid = np.angle(raw * np.exp(-1j * ph))
        variances[c] = float(np.var(resid))
        if variances[c] > variance_warn_threshold:
            warn = True
        trajectories[c] = traj
        out[c] = y[c] * np.exp(-1j * traj)
    if warn:
        warnings.warn("pilot phase estimates are noisy; CPR may be unreliable")
    return out, {
        "phase_trajectories": trajectories,
        "pilot_phase_variance": variances,
        "low_pilot_snr": warn,
    }


def frame_offset(rx_symbols: np.ndarray, tx_symbols: np.ndarray) -> int:
    """Integer circular offset maximizing cross-correlation (pilot sync)."""
    rx = np.asarray(rx_symbols).ravel()
    tx = np.asarray(tx_symbols).ravel()
    corr = np.fft.ifft(np.fft.fft(rx) * np.conj(np.fft.fft(tx)))
    return int(np.argmax(np.abs(corr)))
