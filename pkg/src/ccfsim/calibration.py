"""Monte Carlo calibration oracles for the channel model.

Two constants tie the per-section draws to link-level observables and can be
re-measured here instead of trusted:

* the delay-scale constant that maps the fiber SMD coefficient (ps/sqrt(km))
  to the per-section delay std so that the ensemble rms width of the link
  intensity impulse response equals smd_coeff * sqrt(L);
* the MDL accumulation curve f(K) = E[sigma_rms(K spans)] / sigma_g used by
  the per-span MDL fit.

The impulse-response width is measured through the exact frequency-domain
identity (Parseval): the second moment of the summed |h(t)|^2 profile equals
the frequency average of ||dH/df||_F^2 / (S * (2*pi)^2), evaluated by finite
differences.  This avoids the Dirichlet-leakage bias of moments taken on a
sampled impulse response.
"""

from __future__ import annotations

import numpy as np

from .channel import LinkConfig, build_link, link_transfer
from .core import Seed


def ir_rms_width_ps(link, n_bins: int = 64, span_hz: float = 280e9, dfreq: float = 1e6) -> float:
    """Rms width (ps) of the link intensity impulse response.

    Evaluates H on a coarse grid and on the same grid shifted by dfreq, and
    converts ||dH/df||^2 to the time-domain second moment.  Chromatic
    dispersion is excluded: it is common to all modes and removed before any
    MIMO analysis.
    """
    base = np.linspace(-span_hz / 2, span_hz / 2, n_bins)
    freqs = np.concatenate([base, base + dfreq])
    h = link_transfer(link, freqs, include_cd=False).matrices
    diff = (h[n_bins:] - h[:n_bins]) / dfreq
    m2 = np.mean(np.sum(np.abs(diff) ** 2, axis=(1, 2))) / (link.n_modes * (2.0 * np.pi) ** 2)
    return float(np.sqrt(m2) * 1e12)


def measure_delay_scale(
    seed: Seed,
    n_modes: int = 4,
    smd_coeff: float = 5.3,
    length_km: float = 100.0,
    n_sections: int = 100,
    trials: int = 200,
) -> dict:
    """Estimate the delay-scale constant from the width of unscaled links.

    Builds links with delay_scale=1, measures the ensemble rms impulse
    response width and returns target/measured, which is the constant that
    makes the width equal smd_coeff * sqrt(L).
    """
    config = LinkConfig(
        spans=1,
        span_length_km=length_km,
        sections_per_span=n_sections,
        n_modes=n_modes,
        smd_coeff_ps_sqrt_km=smd_coeff,
        sigma_g_db=0.0,
        fiber_loss_db_per_km=0.0,  # loss is irrelevant to the width oracle
        span_loss_db=0.0,
        delay_scale=1.0,
    )
    widths = np.array(
        [
            ir_rms_width_ps(build_link(config, seed.child("delay-scale", t)))
            for t in range(trials)
        ]
    )
    measured = float(np.sqrt(np.mean(widths**2)))
    target = smd_coeff * np.sqrt(length_km)
    return {
        "n_modes": n_modes,
        "trials": trials,
        "measured_width_ps": measured,
        "target_width_ps": target,
        "delay_scale": target / measured,
    }


def mdl_accumulation_samples(
    seed: Seed,
    span_counts,
    n_modes: int = 24,
    sigma_g_db: float = 0.35,
    trials: int = 500,
) -> dict:
    """Per-frequency-bin sigma_rms samples for each span count.

    Uses the reduced span model: one Haar unitary plus the normalized diagonal
    MDL stage per span.  Any product of a section chain at a fixed frequency
    is Haar distributed, so the single-bin sigma_rms distribution of the full
    model is reproduced exactly.
    """
    from .core import haar_unitary

    out = {}
    k_max = max(span_counts)
    for t in range(trials):
        rng = seed.child("mdl-acc", t).rng()
        h = np.eye(n_modes, dtype=complex)
        for k in range(1, k_max + 1):
            g = rng.standard_normal(n_modes)
            g -= g.mean()
            if sigma_g_db > 0:
                g *= sigma_g_db / np.sqrt(np.mean(g**2))
            else:
                g[:] = 0.0
            h = (10.0 ** (g / 20.0))[:, None] * (haar_unitary(rng, n_modes) @ h)
            if k in span_counts:
                lam = np.linalg.eigvalsh(h.conj().T @ h)
                gains = 10.0 * np.log10(lam)
                gains -= gains.mean()
                out.setdefault(k, []).append(float(np.sqrt(np.mean(gains**2))))
    return {k: np.asarray(v) for k, v in out.items()}


def mdl_accumulation_table(
    seed: Seed,
    span_counts,
    n_modes: int = 24,
    sigma_g_db: float = 0.35,
    trials: int = 500,
) -> dict:
    """Accumulation factors f(K) = E[sigma_rms] / sigma_g per span count."""
    if sigma_g_db <= 0:
        raise ValueError("sigma_g_db must be positive to tabulate accumulation")
    samples = mdl_accumulation_samples(seed, span_counts, n_modes, sigma_g_db, trials)
    return {int(k): float(np.mean(v) / sigma_g_db) for k, v in sorted(samples.items())}


def mdl_accumulation_closed_form(span_counts, sigma_g_db: float) -> dict:
    """Closed-form accumulation factors: sigma_rms / sigma_g = sqrt(K) * sqrt(1 + xi^2/12)
    with xi = sqrt(K)*sigma_g in log-power units (c = 10/ln 10 converts from dB)."""
    c = 10.0 / np.log(10.0)
    out = {}
    for k in span_counts:
        xi2 = k * (sigma_g_db / c) ** 2
        out[int(k)] = float(np.sqrt(k) * np.sqrt(1.0 + xi2 / 12.0))
    return out
