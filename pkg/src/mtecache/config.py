"""Experiment configuration: TOML file, ``section.key=value`` overrides, validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from mtecache.errors import ConfigError
from mtecache.ingest import FORMATS, SynthConfig
from mtecache.io import sha256_text
from mtecache.mtec import MtecConfig
from mtecache.nn.layers import ACTIVATIONS, EncoderConfig
from mtecache.placement import cluster_size
from mtecache.simulator.topology import TopologyConfig


@dataclass
class DatasetSection:
    format: str = "synthetic"  # or a trace layout understood by the parser
    path: str = ""
    max_contents: int = 0  # keep only the most requested contents (0 keeps all)
    n_contents: int = 200
    duration: int = 150_000
    n_events: int = 500_000
    zipf_exponent: float = 0.8
    drift_points: list = field(default_factory=lambda: [30_000, 60_000, 90_000, 120_000])
    drift_fraction: float = 1.0
    n_users: int = 1000


@dataclass
class PipelineSection:
    window: int = 1000
    lookback: int = 9
    k: int = 40
    stride: int = 1
    counts: str = "clamped"  # or "events" for raw per-window request counts
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class ModelSection:
    layers: int = 2
    model_dim: int = 64
    heads: int = 16
    mlp_layers: int = 2
    mlp_size: int = 256
    activation: str = "gelu"
    kernel_size: int = 3
    loss_weights: list = field(default_factory=lambda: [0.2, 0.4, 0.1, 0.3])
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 40
    batch_size: int = 4
    gaf_mode: bool = False


@dataclass
class PlacementSection:
    alpha: float = 0.3
    cache_fraction: float = 0.10
    uav_capacity_ratio: float = 1.0
    n_s: int = 7
    w: int = 1
    z: int = 2


@dataclass
class SimulationSection:
    width: float = 1000.0
    height: float = 1000.0
    fap_intensity: float = 21e-6
    n_faps: int = 0  # 0 draws the count from the Poisson process
    n_uavs: int = 3
    n_users: int = 1000
    gmm_components: int = 3
    gmm_std: float = 150.0
    indoor_prob: float = 0.5
    speed_mean: float = 5.0
    speed_threshold: float = 5.0
    cell_core_radius: float = 150.0
    fap_range: float = 450.0
    content_size: int = 7_000_000
    policies: list = field(default_factory=lambda: ["mtec", "mtec_uncoded", "lru", "lfu", "oracle"])
    sweep: list = field(default_factory=lambda: [0.05, 0.10, 0.15, 0.20])


SECTIONS = {
    "dataset": DatasetSection,
    "pipeline": PipelineSection,
    "model": ModelSection,
    "placement": PlacementSection,
    "simulation": SimulationSection,
}
KNOWN_POLICIES = ("mtec", "mtec_uncoded", "lru", "lfu", "oracle")


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    model: ModelSection = field(default_factory=ModelSection)
    placement: PlacementSection = field(default_factory=PlacementSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    seed: int = 0
    out: str = "runs/default"

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        """Digest of every setting that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out")
        return sha256_text(json.dumps(d, sort_keys=True))

    # ---- views consumed by the modules

    def synth_config(self):
        d = self.dataset
        return SynthConfig(
            n_contents=d.n_contents, duration=d.duration, n_events=d.n_events,
            zipf_exponent=d.zipf_exponent, drift_points=tuple(d.drift_points),
            drift_fraction=d.drift_fraction, n_users=d.n_users, seed=self.seed,
        )

    def mtec_config(self):
        m = self.model
        enc = EncoderConfig(
            layers=m.layers, model_dim=m.model_dim, heads=m.heads, mlp_layers=m.mlp_layers,
            mlp_size=m.mlp_size, activation=m.activation, kernel_size=m.kernel_size,
        )
        return MtecConfig(
            encoder=enc, k=self.pipeline.k, loss_weights=tuple(m.loss_weights), lr=m.lr,
            weight_decay=m.weight_decay, epochs=m.epochs, batch_size=m.batch_size,
            gaf_mode=m.gaf_mode, seed=self.seed,
        )

    def topology_config(self):
        s = self.simulation
        return TopologyConfig(
            width=s.width, height=s.height, fap_intensity=s.fap_intensity,
            n_faps=s.n_faps or None, n_uavs=s.n_uavs, n_users=s.n_users,
            gmm_components=s.gmm_components, gmm_std=s.gmm_std, indoor_prob=s.indoor_prob,
            speed_mean=s.speed_mean, speed_threshold=s.speed_threshold,
            cell_core_radius=s.cell_core_radius, fap_range=s.fap_range,
            w=self.placement.w, z=self.placement.z, seed=self.seed,
        )


def _coerce(where, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, (list, tuple)):
            return list(value)
    raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")


def _apply(cfg, data, errors, origin):
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                errors.append(f"{origin}: [{key}] must be a table")
                continue
            section = getattr(cfg, key)
            names = {f.name for f in dataclasses.fields(section)}
            for k, v in value.items():
                if k not in names:
                    errors.append(f"{origin}: unknown key {key}.{k}")
                    continue
                try:
                    setattr(section, k, _coerce(f"{key}.{k}", v, getattr(section, k)))
                except ConfigError as err:
                    errors.append(str(err))
        elif key in ("seed", "out"):
            try:
                setattr(cfg, key, _coerce(key, value, getattr(cfg, key)))
            except ConfigError as err:
                errors.append(str(err))
        else:
            errors.append(f"{origin}: unknown key {key}")


def parse_override(text):
    """``section.key=value`` with ``value`` read as a TOML literal (bare words are strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    dotted, raw = text.split("=", 1)
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    parts = dotted.strip().split(".")
    if len(parts) == 1:
        return {parts[0]: value}
    if len(parts) != 2:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    return {parts[0]: {parts[1]: value}}


def load_config(path=None, overrides=(), seed=None, out=None):
    cfg = ExperimentConfig()
    errors = []
    if path is not None:
        try:
            data = tomli.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomli.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
        _apply(cfg, data, errors, str(path))
    for ov in overrides:
        _apply(cfg, parse_override(ov), errors, "--set")
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = str(out)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    validate(cfg)
    return cfg


def validate(cfg):
    """Raise one :class:`ConfigError` listing every violated field."""
    errors = []
    d, p, m, pl, s = cfg.dataset, cfg.pipeline, cfg.model, cfg.placement, cfg.simulation
    if d.format != "synthetic" and d.format not in FORMATS and d.format != "movielens_100k_user":
        errors.append(f"dataset.format {d.format!r} unknown")
    if d.format != "synthetic" and not d.path:
        errors.append("dataset.path is required for file datasets")
    if d.max_contents < 0:
        errors.append("dataset.max_contents must be >= 0")
    if d.format == "synthetic":
        try:
            cfg.synth_config().validate()
        except ConfigError as err:
            errors.append(f"dataset: {err}")
    for name in ("window", "lookback", "k", "stride"):
        if getattr(p, name) < 1:
            errors.append(f"pipeline.{name} must be >= 1")
    if p.counts not in ("clamped", "events"):
        errors.append("pipeline.counts must be 'clamped' or 'events'")
    if len(p.split) != 3 or min(p.split) < 0 or abs(sum(p.split) - 1) > 1e-9:
        errors.append("pipeline.split must be three non-negative fractions summing to 1")
    if d.format == "synthetic" and p.k > d.n_contents:
        errors.append(f"pipeline.k={p.k} exceeds dataset.n_contents={d.n_contents}")
    if m.activation not in ACTIVATIONS:
        errors.append(f"model.activation must be one of {sorted(ACTIVATIONS)}")
    try:
        cfg.mtec_config()
    except ConfigError as err:
        errors.append(f"model: {err}")
    if not 0 <= pl.alpha <= 1:
        errors.append("placement.alpha must lie in [0, 1]")
    if not 0 < pl.cache_fraction <= 1:
        errors.append("placement.cache_fraction must lie in (0, 1]")
    if pl.uav_capacity_ratio <= 0:
        errors.append("placement.uav_capacity_ratio must be > 0")
    if pl.n_s < 1:
        errors.append("placement.n_s must be >= 1")
    try:
        if cluster_size(pl.w, pl.z) > pl.n_s:
            errors.append(
                f"placement: inter-cluster size {cluster_size(pl.w, pl.z)} exceeds n_s={pl.n_s}, "
                "so segments cannot be kept distinct"
            )
    except ConfigError as err:
        errors.append(f"placement: {err}")
    try:
        cfg.topology_config().validate()
    except ConfigError as err:
        errors.append(f"simulation: {err}")
    if s.content_size < 1 or s.content_size % pl.n_s:
        errors.append("simulation.content_size must be a positive multiple of placement.n_s")
    bad = [x for x in s.policies if x not in KNOWN_POLICIES]
    if bad or not s.policies:
        errors.append(f"simulation.policies must be drawn from {KNOWN_POLICIES}")
    if not s.sweep or any(not 0 < f <= 1 for f in s.sweep):
        errors.append("simulation.sweep fractions must lie in (0, 1]")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg
