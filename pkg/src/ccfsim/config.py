"""Experiment configuration: schema, JSON loading, environment overrides and
config hashing for reproducible sweep runs.

The config file is a single JSON document with a schema_version field; any
key can be overridden from the environment with CCFSIM_<SECTION>__<FIELD>
(e.g. CCFSIM_LINK__SPANS=8), values parsed as JSON literals.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .channel import LinkConfig
from .errors import ConfigError
from .rxdsp import EqualizerConfig

SCHEMA_VERSION = 1
ENV_PREFIX = "CCFSIM_"


@dataclass
class TxConfig:
    symbol_rate_hz: float = 140e9
    wdm_grid_hz: float = 150e9
    target_entropy_2d: float = 4.688
    rolloff: float = 0.05
    pilot_rate: float = 1.0 / 64.0
    n_wdm_channels: int = 31
    n_simulated_slots: int = 3  # SUT plus adjacent dummies; rest analytic
    laser_linewidth_hz: float = 0.0  # optional; source spec'd at 10 kHz
    mux_min_separation_samples: int = 256

    def validate(self) -> "TxConfig":
        if self.symbol_rate_hz <= 0 or self.wdm_grid_hz <= 0:
            raise ConfigError("rates must be positive")
        if (1.0 + self.rolloff) * self.symbol_rate_hz > self.wdm_grid_hz:
            raise ConfigError("occupied bandwidth exceeds the WDM grid")
        if not 0.0 <= self.pilot_rate < 1.0:
            raise ConfigError("pilot_rate must be in [0, 1)")
        if self.n_wdm_channels < 1:
            raise ConfigError("n_wdm_channels must be >= 1")
        if self.n_simulated_slots < 1:
            raise ConfigError("n_simulated_slots must be >= 1")
        return self


@dataclass
class RunConfig:
    n_modes: int = 4  # desk scale; 24 at full scale
    n_symbols: int = 65536
    trials: int = 10
    master_seed: int = 2024
    sweep_span_counts: tuple = (1, 4, 8, 19)
    stability_span_count: int = 8
    workers: int = 1
    use_dsp: bool = True  # False: tau_m from link impulse responses only

    def validate(self) -> "RunConfig":
        if self.n_modes < 2 or self.n_modes % 2:
            raise ConfigError("n_modes must be even and >= 2")
        if self.n_symbols < 1024:
            raise ConfigError("n_symbols too small for equalization")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if any(k < 1 for k in self.sweep_span_counts):
            raise ConfigError("sweep span counts must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    link: LinkConfig = field(default_factory=LinkConfig)
    tx: TxConfig = field(default_factory=TxConfig)
    rx: EqualizerConfig = field(default_factory=EqualizerConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}"
            )
        self.tx.validate()
        self.run.validate()
        # cross-field checks; per-link span counts are set by the sweeps
        link = dataclasses.replace(self.link, n_modes=self.run.n_modes)
        link.validate()
        try:
            self.rx.resolved_advance()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def link_for(self, spans: int) -> LinkConfig:
        return dataclasses.replace(self.link, spans=spans, n_modes=self.run.n_modes)

    def full_scale(self) -> "ExperimentConfig":
        """Paper-scale variant: 24 modes and every WDM slot simulated."""
        out = dataclasses.replace(self)
        out.run = dataclasses.replace(self.run, n_modes=24)
        out.tx = dataclasses.replace(self.tx, n_simulated_slots=self.tx.n_wdm_channels)
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


_SECTIONS = {"link": LinkConfig, "tx": TxConfig, "rx": EqualizerConfig, "run": RunConfig}


def _build_section(cls, data: dict, where: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        kwargs[name] = _build_section(cls, section, name)
    if data:
        raise ConfigError(f"unknown top-level keys: {sorted(data)}")
    cfg = ExperimentConfig(schema_version=version, **kwargs)
    return cfg.validate()


def apply_env_overrides(data: dict, environ=None) -> dict:
    """Fold CCFSIM_SECTION__FIELD environment variables into a config dict."""
    environ = environ if environ is not None else os.environ
    out = json.loads(json.dumps(data))  # deep copy
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX) :].lower().split("__")
        if len(path) != 2 or path[0] not in _SECTIONS:
            raise ConfigError(f"malformed override variable {key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.setdefault(path[0], {})[path[1]] = value
    return out


def load_config(path: str | None, environ=None) -> ExperimentConfig:
    """Load a JSON config file (or defaults) with environment overrides."""
    if path is None:
        data = {}
    else:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    data = apply_env_overrides(data, environ)
    return config_from_dict(data)
