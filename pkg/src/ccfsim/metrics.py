"""Quantitative evaluation: channel memory length, rms mode-dependent loss,
accumulation-law fits, generalized mutual information and rate aggregation.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import SpectralTransfer
from .errors import AlignmentError, FitError
from .txdsp import ShapedConstellation

LOG2 = np.log(2.0)


# ---------------------------------------------------------------------------
# channel statistics


def memory_length(
    responses: np.ndarray,
    sample_interval_ns: float,
    fraction: float = 0.9,
    circular: bool = True,
) -> float:
    """Length (ns) of the minimal contiguous window holding `fraction` of the
    impulse-response energy.

    `responses` is any array whose last axis is time; |h|^2 is summed over all
    other axes into a single power profile.  With circular=True the window may
    wrap around the profile end, which matches responses computed on an FFT
    grid where negative delays alias to the tail.
    """
    arr = np.asarray(responses)
    profile = np.abs(arr) ** 2
    while profile.ndim > 1:
        profile = profile.sum(axis=0)
    total = profile.sum()
    if total <= 0:
        raise ValueError("impulse responses carry no energy")
    target = fraction * total
    n = profile.size
    ext = np.concatenate([profile, profile]) if circular else profile
    prefix = np.concatenate([[0.0], np.cumsum(ext)])
    # exhaustive over start indices: smallest end with sum >= target
    starts = np.arange(n if circular else ext.size)
    ends = np.searchsorted(prefix, prefix[starts] + target * (1.0 - 1e-12), side="left")
    widths = ends - starts
    valid = ends < prefix.size
    widths = np.minimum(widths[valid], n) if circular else widths[valid]
    if widths.size == 0:
        widths = np.array([n])
    return float(widths.min() * sample_interval_ns)


def fit_sqrt_law(points) -> float:
    """Least-squares fit of tau_m = a * sqrt(L); returns a (ps per sqrt(km))
    when fed (L_km, tau_m_ps) pairs (any consistent units work)."""
    pts = [(float(l), float(t)) for l, t in points]
    if len(pts) < 2:
        raise FitError("need at least 2 points to fit the sqrt law")
    lengths = np.array([p[0] for p in pts])
    taus = np.array([p[1] for p in pts])
    if np.any(lengths <= 0):
        raise FitError("lengths must be positive")
    if np.unique(lengths).size < 2:
        raise FitError("all lengths equal; sqrt-law fit is degenerate")
    root = np.sqrt(lengths)
    return float(np.sum(root * taus) / np.sum(lengths))


def fit_power_law(points) -> tuple[float, float, float]:
    """Log-log least squares tau = c * L^alpha; returns (alpha, c, r_squared)."""
    lengths = np.array([float(l) for l, _ in points])
    taus = np.array([float(t) for _, t in points])
    if lengths.size < 2 or np.any(lengths <= 0) or np.any(taus <= 0):
        raise FitError("power-law fit needs >= 2 points with positive values")
    x, y = np.log(lengths), np.log(taus)
    design = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    yhat = design @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[1]), float(np.exp(coef[0])), r2


def rms_mdl(transfer: SpectralTransfer) -> float:
    """Rms mode-dependent loss (dB): per bin, eigenvalues of H^H H in dB with
    the per-bin mean removed; returns sqrt of the frequency-averaged variance."""
    h = transfer.matrices
    gram = np.einsum("fij,fik->fjk", h.conj(), h)
    lam = np.linalg.eigvalsh(gram)
    floor = 1e-12 * lam.max()
    if np.any(lam <= floor):
        warnings.warn("near-singular transfer matrix; clamping eigenvalues")
        lam = np.maximum(lam, floor)
    gains = 10.0 * np.log10(lam)
    gains -= gains.mean(axis=1, keepdims=True)
    return float(np.sqrt(np.mean(gains**2)))


def fit_mdl_per_span(
    points,
    accumulation_table: dict | None = None,
    sigma_g_hint: float = 0.35,
    closed_form: bool = False,
) -> float:
    """Fit the per-span rms MDL sigma_g from (span_count, sigma_rms_dB) pairs.

    The accumulation curve sigma_rms = sigma_g * f(K) is taken from a Monte
    Carlo table built by the calibration module (self-consistent with the span
    model); closed_form=True switches to the analytic small-MDL law instead.
    An explicit accumulation_table {K: f} overrides both.
    """
    pts = [(int(k), float(v)) for k, v in points]
    if not pts:
        raise FitError("no points to fit")
    if any(k < 1 for k, _ in pts):
        raise FitError("span counts must be >= 1")
    ks = sorted({k for k, _ in pts})
    if accumulation_table is None:
        if closed_form:
            from .calibration import mdl_accumulation_closed_form

            accumulation_table = mdl_accumulation_closed_form(ks, sigma_g_hint)
        else:
            accumulation_table = _default_accumulation_table(tuple(ks))
    missing = [k for k in ks if k not in accumulation_table]
    if missing:
        raise FitError(f"accumulation table lacks span counts {missing}")
    by_k = {}
    for k, v in pts:
        by_k.setdefault(k, []).append(v)
    means = {k: float(np.mean(v)) for k, v in by_k.items()}
    ordered = [means[k] for k in ks]
    if len(ks) > 2 and any(b < 0.8 * a for a, b in zip(ordered, ordered[1:])):
        warnings.warn("sigma_rms not monotone in span count beyond noise tolerance")
    f = np.array([accumulation_table[k] for k, _ in pts])
    y = np.array([v for _, v in pts])
    return float(np.sum(f * y) / np.sum(f * f))


_ACCUMULATION_CACHE: dict = {}


def _default_accumulation_table(ks: tuple) -> dict:
    """Monte Carlo accumulation factors, cached per span-count tuple."""
    if ks not in _ACCUMULATION_CACHE:
        from .calibration import mdl_accumulation_table
        from .core import Seed

        _ACCUMULATION_CACHE[ks] = mdl_accumulation_table(
            Seed(0xACC0), ks, n_modes=24, sigma_g_db=0.35, trials=300
        )
    return _ACCUMULATION_CACHE[ks]


# ---------------------------------------------------------------------------
# information metrics


def _align_gain(tx: np.ndarray, rx: np.ndarray) -> complex:
    """Data-aided complex gain; raises if the streams do not correlate.

    The threshold scales with 1/sqrt(M): a misaligned stream correlates at
    that level by chance, while an aligned one stays above it down to very
    low SNR.
    """
    cross = np.vdot(tx, rx)
    denom = np.vdot(tx, tx).real
    rho = abs(cross) / np.sqrt(denom * np.vdot(rx, rx).real + 1e-300)
    threshold = max(6.0 / np.sqrt(tx.size), 0.01)
    if rho < threshold:
        raise AlignmentError(
            f"tx/rx correlation {rho:.3f} below {threshold:.3f}; streams misaligned"
        )
    return cross / denom


def gmi(
    tx_symbols: np.ndarray,
    rx_symbols: np.ndarray,
    constellation: ShapedConstellation,
    noise_var: float | None = None,
) -> float:
    """Generalized mutual information (bits/2D) under a Gaussian decoding metric.

    The auxiliary-channel variance defaults to the data-aided residual
    variance after removing the least-squares complex gain.  The result is
    clipped to [0, source entropy].
    """
    tx = np.asarray(tx_symbols).ravel()
    rx = np.asarray(rx_symbols).ravel()
    if tx.size != rx.size or tx.size == 0:
        raise AlignmentError("tx and rx streams must have equal nonzero length")
    gain = _align_gain(tx, rx)
    rx = rx / gain
    if noise_var is None:
        noise_var = float(np.mean(np.abs(rx - tx) ** 2))
    if noise_var <= 1e-15:
        return float(constellation.entropy_2d)
    pts = constellation.points
    logp = np.log(constellation.probs)
    acc = 0.0
    for lo in range(0, tx.size, 32768):  # chunked: M x 36 distance tables
        txc, rxc = tx[lo : lo + 32768], rx[lo : lo + 32768]
        d2 = np.abs(rxc[:, None] - pts[None, :]) ** 2
        a = -d2 / noise_var + logp[None, :]
        amax = a.max(axis=1)
        lognum = amax + np.log(np.sum(np.exp(a - amax[:, None]), axis=1))
        idx = np.argmin(np.abs(txc[:, None] - pts[None, :]) ** 2, axis=1)
        logden = -np.abs(rxc - pts[idx]) ** 2 / noise_var + logp[idx]
        acc += float(np.sum(lognum - logden))
    value = constellation.entropy_2d - acc / tx.size / LOG2
    return float(np.clip(value, 0.0, constellation.entropy_2d))


def gmi_awgn_oracle(
    constellation: ShapedConstellation, snr_db: float, n_nodes: int = 48
) -> float:
    """GMI on the AWGN channel by Gauss-Hermite quadrature (no sampling).

    Independent of the data path: integrates the decoding-metric expectation
    over the exact noise distribution at the given SNR (unit signal power).
    """
    sigma2 = 10.0 ** (-snr_db / 10.0)
    t, w = np.polynomial.hermite.hermgauss(n_nodes)
    axis = np.sqrt(sigma2) * t  # sqrt(2)*sigma_axis*t with sigma_axis^2 = sigma2/2
    noise = (axis[:, None] + 1j * axis[None, :]).ravel()
    weight = (w[:, None] * w[None, :]).ravel() / np.pi
    pts = constellation.points
    logp = np.log(constellation.probs)
    expectation = 0.0
    for k, xk in enumerate(pts):
        y = xk + noise
        d2 = np.abs(y[:, None] - pts[None, :]) ** 2
        a = -d2 / sigma2 + logp[None, :]
        amax = a.max(axis=1)
        lognum = amax + np.log(np.sum(np.exp(a - amax[:, None]), axis=1))
        logden = -np.abs(y - xk) ** 2 / sigma2 + logp[k]
        expectation += constellation.probs[k] * np.sum(weight * (lognum - logden))
    value = constellation.entropy_2d - expectation / LOG2
    return float(np.clip(value, 0.0, constellation.entropy_2d))


# ---------------------------------------------------------------------------
# rate aggregation


DEFAULT_RATE_TABLE = tuple(np.round(np.arange(0.60, 0.951, 0.05), 2))


@dataclass
class RateSummary:
    net_bits_per_2d: float  # per spatial channel, info bits per symbol
    achievable_bits_per_2d: float  # mean GMI
    code_rate: float
    ngmi: float
    feasible: bool
    net_total_bps: float
    achievable_total_bps: float


def ngmi_from_gmi(gmi_bits: float, entropy: float, bits_per_symbol: float) -> float:
    """Normalized GMI: 1 - (H - GMI)/m."""
    return 1.0 - (entropy - gmi_bits) / bits_per_symbol


def net_rate(
    gmi_per_channel,
    symbol_rate_hz: float,
    constellation: ShapedConstellation,
    rate_table=DEFAULT_RATE_TABLE,
    framing: str = "joint",
) -> RateSummary:
    """Net and achievable bitrate for one wavelength over all spatial channels.

    With joint framing (FEC frames across all spatial channels) the code rate
    is selected by the NGMI of the pooled stream, i.e. the spatial mean;
    per-channel framing keeps one frame per channel but the line runs a single
    code, so the weakest channel's NGMI picks the rate.  Thresholds follow the
    ideal-decoding approximation threshold = code rate.
    """
    gmis = np.asarray(list(gmi_per_channel), dtype=float)
    h = constellation.entropy_2d
    m = constellation.bits_per_symbol
    if np.any(gmis < 0) or np.any(gmis > h + 1e-9):
        raise ValueError("GMI values must lie in [0, source entropy]")
    if framing == "joint":
        ngmi = ngmi_from_gmi(float(gmis.mean()), h, m)
    elif framing == "per_channel":
        ngmi = ngmi_from_gmi(float(gmis.min()), h, m)
    else:
        raise ValueError(f"unknown framing {framing!r}")
    rates = sorted(rate_table)
    feasible = [r for r in rates if r <= ngmi + 1e-12]
    s = gmis.size
    achievable_total = symbol_rate_hz * float(gmis.sum())
    if not feasible:
        return RateSummary(0.0, float(gmis.mean()), 0.0, ngmi, False, 0.0, achievable_total)
    r = feasible[-1]
    net_2d = h - (1.0 - r) * m
    net_2d = max(net_2d, 0.0)
    return RateSummary(
        net_bits_per_2d=net_2d,
        achievable_bits_per_2d=float(gmis.mean()),
        code_rate=float(r),
        ngmi=float(ngmi),
        feasible=True,
        net_total_bps=symbol_rate_hz * net_2d * s,
        achievable_total_bps=achievable_total,
    )


# ---------------------------------------------------------------------------
# report container


@dataclass
class WdmChannelResult:
    center_frequency_hz: float
    gmi_2d: float
    ngmi: float
    net_rate_tbps: float
    achievable_rate_tbps: float
    simulated: bool = True


@dataclass
class MetricsReport:
    per_wdm_channel: list = field(default_factory=list)  # of WdmChannelResult
    tau_m_ns: float | None = None
    sigma_rms_db: float | None = None
    fit_a_ps_sqrt_km: float | None = None
    fit_sigma_g_db: float | None = None
    series: list = field(default_factory=list)  # per (point, trial) dict rows
    config_echo: dict = field(default_factory=dict)
    seed_echo: int | None = None
    errors: list = field(default_factory=list)

    def totals(self) -> dict:
        net = sum(c.net_rate_tbps for c in self.per_wdm_channel)
        ach = sum(c.achievable_rate_tbps for c in self.per_wdm_channel)
        return {"net_rate_tbps": net, "achievable_rate_tbps": ach}

    def to_json(self) -> str:
        payload = asdict(self)
        payload["totals"] = self.totals()
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        data = json.loads(text)
        data.pop("totals", None)
        channels = [WdmChannelResult(**c) for c in data.pop("per_wdm_channel", [])]
        return cls(per_wdm_channel=channels, **data)

    def series_csv(self, header_lines=()) -> str:
        """Flat CSV of the per-point series rows (one row per channel/trial)."""
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        rows = self.series or [
            {
                "center_frequency_hz": c.center_frequency_hz,
                "gmi_2d": c.gmi_2d,
                "ngmi": c.ngmi,
                "net_rate_tbps": c.net_rate_tbps,
                "achievable_rate_tbps": c.achievable_rate_tbps,
                "simulated": int(c.simulated),
            }
            for c in self.per_wdm_channel
        ]
        if not rows:
            return buf.getvalue()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()
