"""Shared value types: multi-channel waveforms, spectral transfer matrices,
hierarchical seeded randomness and FFT-grid bookkeeping.

Conventions used throughout the package:

* Optical fields are complex baseband envelopes, one row per spatial or
  polarization channel.  Channel index c = 2*core + pol with pol X=0, Y=1.
* Absolute optical frequency is carried as metadata only; the linear model
  never mixes WDM slots except through explicit filters.
* Group delays are handled in picoseconds, fiber lengths in km, gains and
  losses in dB, frequencies in Hz.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

PLANCK_J_S = 6.62607015e-34
# reference optical frequency for amplifier noise energy h*nu
ASE_REFERENCE_HZ = 193.7e12
C_BAND_CENTER_HZ = 194.1e12


def fft_bin_frequencies(n: int, sample_rate: float) -> np.ndarray:
    """Baseband frequencies (Hz) of an n-point FFT in natural bin order.

    Bin k maps to k*fs/n for k < n/2 and to (k-n)*fs/n otherwise.
    """
    if n < 1:
        raise ValueError(f"FFT size must be >= 1, got {n}")
    if sample_rate <= 0:
        raise ValueError(f"sample rate must be positive, got {sample_rate}")
    return np.fft.fftfreq(n, d=1.0 / sample_rate)


def db_to_linear(x_db):
    """dB -> linear power ratio."""
    x = np.asarray(x_db, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("dB value must be finite")
    out = 10.0 ** (x / 10.0)
    return float(out) if np.isscalar(x_db) else out


def linear_to_db(ratio):
    """Linear power ratio -> dB.  Non-positive ratios are a domain error."""
    arr = np.asarray(ratio, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("linear_to_db requires a strictly positive ratio")
    out = 10.0 * np.log10(arr)
    return float(out) if np.isscalar(ratio) else out


def _encode_stream_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream id parts must be int or str, got {type(part)!r}")


@dataclass(frozen=True)
class Seed:
    """Hierarchical, counter-based random stream identifier.

    Identical (master_seed, path) always reproduces the same draws; distinct
    paths give statistically independent streams, so parallel trials can draw
    in any order.
    """

    master_seed: int
    path: tuple = field(default_factory=tuple)

    def child(self, *parts) -> "Seed":
        return Seed(self.master_seed, self.path + tuple(parts))

    def rng(self) -> np.random.Generator:
        key = tuple(_encode_stream_part(p) for p in self.path)
        ss = np.random.SeedSequence(self.master_seed & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))


@dataclass
class MultiChannelWaveform:
    """Time-domain complex baseband samples for S channels at one sample rate."""

    samples: np.ndarray  # (channels, n) complex
    sample_rate: float  # Hz
    center_frequency: float = C_BAND_CENTER_HZ  # absolute optical, Hz

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.complex128))
        if self.samples.ndim != 2:
            raise ValueError("samples must be a (channels, n) array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel_power(self) -> np.ndarray:
        """Mean |sample|^2 per channel."""
        return np.mean(np.abs(self.samples) ** 2, axis=1)

    def validate(self) -> "MultiChannelWaveform":
        if not np.all(np.isfinite(self.samples.view(float))):
            raise FloatingPointError("waveform contains NaN or Inf samples")
        return self

    def with_samples(self, samples: np.ndarray) -> "MultiChannelWaveform":
        return replace(self, samples=samples)

    def spectrum(self) -> np.ndarray:
        return np.fft.fft(self.samples, axis=1)

    def frequencies(self) -> np.ndarray:
        return fft_bin_frequencies(self.n_samples, self.sample_rate)


@dataclass
class SpectralTransfer:
    """Frequency-resolved S x S channel matrix sampled on an FFT bin grid."""

    freq_grid: np.ndarray  # (f,) Hz, natural FFT order
    matrices: np.ndarray  # (f, s, s) complex

    def __post_init__(self):
        self.freq_grid = np.asarray(self.freq_grid, dtype=float)
        self.matrices = np.asarray(self.matrices, dtype=np.complex128)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise ValueError("matrices must have shape (f, s, s)")
        if self.freq_grid.shape[0] != self.matrices.shape[0]:
            raise ValueError("freq_grid length must match number of matrices")

    @property
    def n_modes(self) -> int:
        return self.matrices.shape[1]

    @property
    def n_bins(self) -> int:
        return self.matrices.shape[0]

    def unitarity_error(self) -> float:
        """max_f ||H^H(f) H(f) - I|| (Frobenius), for unitarity checks."""
        s = self.n_modes
        gram = np.einsum("fij,fik->fjk", self.matrices.conj(), self.matrices)
        return float(np.max(np.linalg.norm(gram - np.eye(s), axis=(1, 2))))

    def impulse_responses(self, window: str | None = "hann") -> np.ndarray:
        """Time-domain responses (f, s, s) by inverse FFT over the bin axis.

        A spectral window (default Hann) suppresses the Dirichlet leakage of
        delays that fall between time samples; pass None for the raw inverse.
        """
        h = self.matrices
        if window is not None:
            if window != "hann":
                raise ValueError(f"unsupported window {window!r}")
            n = self.n_bins
            w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)  # periodic Hann
            w = np.fft.ifftshift(w)  # peak at bin 0 to match natural order
            h = h * w[:, None, None]
        return np.fft.ifft(h, axis=0)

    def intensity_profile(self, window: str | None = "hann") -> np.ndarray:
        """Summed |h|^2 over all matrix entries, one value per time sample."""
        h = self.impulse_responses(window=window)
        return np.sum(np.abs(h) ** 2, axis=(1, 2))


def haar_unitary(rng: np.random.Generator, s: int) -> np.ndarray:
    """Draw an s x s unitary from the Haar measure (QR with phase fix)."""
    z = (rng.standard_normal((s, s)) + 1j * rng.standard_normal((s, s))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))[None, :]
