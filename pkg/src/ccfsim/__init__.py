"""Waveform-level simulator of coupled-core multicore fiber links with the
coherent MIMO DSP chain and the capacity/dispersion metrics used to
characterize them."""

from .core import (
    MultiChannelWaveform,
    Seed,
    SpectralTransfer,
    db_to_linear,
    fft_bin_frequencies,
    linear_to_db,
)
from .channel import (
    FiberSection,
    LinkConfig,
    LinkRealization,
    SpanRealization,
    apply_link,
    build_link,
    draw_mdl_log_gains,
    draw_section,
    link_transfer,
)
from .txdsp import (
    ShapedConstellation,
    SymbolFrame,
    core_mux_emulate,
    draw_frame,
    mb_shape,
    rrc_modulate,
    truncated_36qam_points,
    wdm_assemble,
)
from .rxdsp import (
    EqualizedOutput,
    EqualizerConfig,
    EqualizerState,
    carrier_phase_recover,
    cd_compensate,
    fd_mimo_equalize,
    widely_linear_compose,
)
from .metrics import (
    MetricsReport,
    fit_mdl_per_span,
    fit_sqrt_law,
    gmi,
    gmi_awgn_oracle,
    memory_length,
    net_rate,
    rms_mdl,
)
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"
