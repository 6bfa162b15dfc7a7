"""System, model, and training configuration with named presets.

All dimensional and physical constants live here. ``desk`` is the small
preset used by CI and the self-check (all dimension ratios mirror ``paper``
so the code paths are identical); ``paper`` is the full-scale preset.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0  # m/s
FRAME_DURATION_S = 0.01  # one NR radio frame

# Symbols nominally available for SRS in one frame (80 slots x 8). Recorded as
# a documented constant only; nothing downstream computes with it.
SRS_SYMBOL_BUDGET_PER_FRAME = 640


@dataclass(frozen=True)
class SystemConfig:
    """Physical, array, frame, and codebook dimensions for one run.

    Immutable after construction; safe to share across threads. Sweeps are
    driven by building modified copies (``dataclasses.replace``).
    """

    carrier_freq_hz: float = 30e9
    subcarrier_spacing_hz: float = 120e3
    num_subcarriers: int = 60  # K
    num_bs_antennas: int = 256  # N_BS
    antenna_spacing_wavelengths: float = 0.5
    num_rf_chains: int = 8  # N_RF
    widebeam_group_factor: int = 4  # v
    widebeam_count: int = 64  # G
    distance_samples: int = 5  # M
    distance_range_m: tuple[float, float] = (5.0, 20.0)
    angle_range_deg: tuple[float, float] = (-60.0, 60.0)
    context_frames: int = 7  # P
    rician_k_db: float = 10.0
    num_clusters: int = 12
    rays_per_cluster: int = 20
    ul_power_dbm: float = 20.0
    noise_power_dbm: float = -110.0
    speed_range_kmh: tuple[float, float] = (30.0, 100.0)
    rng_seed: int = 0
    # Pilot-pipeline variants; the simplified-pilot ablation flips both.
    pilot_scheme: str = "zc"  # "zc" | "ones"
    digital_scheme: str = "cyclic"  # "cyclic" | "identity"

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ConfigError("num_subcarriers must be >= 1")
        if self.context_frames < 1:
            raise ConfigError("context_frames must be >= 1")
        if self.num_bs_antennas < 1 or self.num_rf_chains < 1:
            raise ConfigError("antenna and RF-chain counts must be positive")
        if self.widebeam_count % self.num_rf_chains != 0:
            raise ConfigError(
                f"num_rf_chains ({self.num_rf_chains}) must divide "
                f"widebeam_count ({self.widebeam_count})"
            )
        if self.widebeam_count * self.widebeam_group_factor != self.num_bs_antennas:
            raise ConfigError(
                f"widebeam_count * widebeam_group_factor must equal num_bs_antennas "
                f"({self.widebeam_count} * {self.widebeam_group_factor} != "
                f"{self.num_bs_antennas})"
            )
        if self.distance_range_m[0] <= 0:
            raise ConfigError("distance_range_m minimum must be > 0")
        if self.distance_range_m[0] > self.distance_range_m[1]:
            raise ConfigError("distance_range_m must be (min, max)")
        if self.distance_samples < 1:
            raise ConfigError("distance_samples must be >= 1")
        if self.pilot_scheme not in ("zc", "ones"):
            raise ConfigError(f"unknown pilot_scheme {self.pilot_scheme!r}")
        if self.digital_scheme not in ("cyclic", "identity"):
            raise ConfigError(f"unknown digital_scheme {self.digital_scheme!r}")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def codebook_size(self) -> int:
        """Near-field codebook cardinality N_BS * M."""
        return self.num_bs_antennas * self.distance_samples

    @property
    def pilot_symbols(self) -> int:
        return self.widebeam_count // self.num_rf_chains

    @property
    def ul_power_linear(self) -> float:
        return dbm_to_watt(self.ul_power_dbm)

    @property
    def noise_power_linear(self) -> float:
        return dbm_to_watt(self.noise_power_dbm)


@dataclass(frozen=True)
class FrameTiming:
    """NR frame bookkeeping: where the pilot symbols live in a 10 ms frame."""

    slots_per_frame: int = 80
    symbols_per_slot: int = 14
    srs_symbols_per_ul_slot: int = 4  # n, last symbols of each uplink slot
    pilot_symbols_per_frame: int = 8

    def __post_init__(self):
        if self.srs_symbols_per_ul_slot not in (1, 2, 4):
            raise ConfigError("srs_symbols_per_ul_slot must be in {1, 2, 4}")


def frame_timing(cfg: SystemConfig) -> FrameTiming:
    return FrameTiming(pilot_symbols_per_frame=cfg.pilot_symbols)


def pilot_symbol_budget(cfg: SystemConfig) -> int:
    """OFDM symbols needed to sweep every widebeam: G / N_RF."""
    return cfg.widebeam_count // cfg.num_rf_chains


@dataclass(frozen=True)
class ModelConfig:
    """CNN + transformer dimensions.

    The projection input is block_channels * pool_hw**2; d_emb must be
    divisible by n_heads.
    """

    init_channels: int = 32
    block_channels: int = 64
    pool_hw: int = 4
    d_emb: int = 512
    n_heads: int = 8
    n_layers: int = 4
    ffn_hidden: int = 2048
    dropout: float = 0.2
    causal: bool = True
    init_std: float = 0.02
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.d_emb % self.n_heads != 0:
            raise ConfigError(
                f"d_emb ({self.d_emb}) must be divisible by n_heads ({self.n_heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_emb // self.n_heads


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule knobs for the pretrain/finetune recipe."""

    batch_size: int = 64
    pretrain_epochs: int = 10
    finetune_epochs: int = 16
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-4
    lr_schedule: str = "cosine"  # "cosine" | "constant"
    mask_alpha: float = 0.3
    masked_only_loss: bool = False
    freeze_stage: str = "finetune"  # "pretrain" | "finetune" | "none"
    grad_clip: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_alpha < 1.0:
            raise ConfigError("mask_alpha must be in [0, 1)")
        if self.freeze_stage not in ("pretrain", "finetune", "none"):
            raise ConfigError(f"unknown freeze_stage {self.freeze_stage!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")


_SYSTEM_PRESETS = {
    "paper": SystemConfig(),
    "desk": SystemConfig(
        carrier_freq_hz=30e9,
        subcarrier_spacing_hz=120e3,
        num_subcarriers=8,
        num_bs_antennas=32,
        num_rf_chains=4,
        widebeam_group_factor=4,
        widebeam_count=8,
        distance_samples=3,
        distance_range_m=(1.0, 4.0),
        angle_range_deg=(-60.0, 60.0),
        context_frames=5,
        rician_k_db=10.0,
        num_clusters=4,
        rays_per_cluster=5,
        ul_power_dbm=20.0,
        noise_power_dbm=-110.0,
        speed_range_kmh=(6.0, 20.0),
    ),
}

_MODEL_PRESETS = {
    "paper": ModelConfig(),
    "desk": ModelConfig(
        init_channels=8,
        block_channels=16,
        pool_hw=2,
        d_emb=64,
        n_heads=4,
        n_layers=2,
        ffn_hidden=256,
        dropout=0.1,
    ),
}

_TRAIN_PRESETS = {
    "paper": TrainConfig(batch_size=256, pretrain_epochs=50, finetune_epochs=30),
    "desk": TrainConfig(batch_size=64, pretrain_epochs=10, finetune_epochs=16),
}


def preset(name: str) -> SystemConfig:
    """Named system preset; raises ConfigError for unknown names."""
    try:
        return _SYSTEM_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; known: {sorted(_SYSTEM_PRESETS)}"
        ) from None


def model_preset(name: str) -> ModelConfig:
    try:
        return _MODEL_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown model preset {name!r}; known: {sorted(_MODEL_PRESETS)}"
        ) from None


def train_preset(name: str) -> TrainConfig:
    try:
        return _TRAIN_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown train preset {name!r}; known: {sorted(_TRAIN_PRESETS)}"
        ) from None


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved run: system + model + training."""

    system: SystemConfig = field(default_factory=SystemConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def run_preset(name: str) -> RunConfig:
    return RunConfig(system=preset(name), model=model_preset(name), train=train_preset(name))


_SECTION_TYPES = {"system": SystemConfig, "model": ModelConfig, "train": TrainConfig}


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    # tuple[float, float] ranges, written "lo, hi"
    parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
    if len(parts) != 2:
        raise ConfigError(f"expected 'lo, hi' pair, got {raw!r}")
    return (float(parts[0]), float(parts[1]))


def load_config_file(path: str) -> dict[str, dict[str, object]]:
    """Parse a key = value config file with [system]/[model]/[train] sections."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    out: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTION_TYPES[section]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values: dict[str, object] = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            default = getattr(cls(), key)
            kind = type(default)
            values[key] = _parse_value(raw, kind if not isinstance(default, tuple) else tuple)
        out[section] = values
    return out


def build_run_config(
    preset_name: str = "desk",
    config_path: str | None = None,
    overrides: dict[str, dict[str, object]] | None = None,
) -> RunConfig:
    """Resolve preset defaults, then file values, then explicit overrides."""
    base = run_preset(preset_name)
    merged: dict[str, dict[str, object]] = {"system": {}, "model": {}, "train": {}}
    if config_path is not None:
        for section, values in load_config_file(config_path).items():
            merged[section].update(values)
    if overrides:
        for section, values in overrides.items():
            if section not in merged:
                raise ConfigError(f"unknown config section {section!r}")
            merged[section].update(values)
    return RunConfig(
        system=dataclasses.replace(base.system, **merged["system"]),
        model=dataclasses.replace(base.model, **merged["model"]),
        train=dataclasses.replace(base.train, **merged["train"]),
    )


def config_digest(run_cfg: RunConfig) -> str:
    """Stable hash of a resolved run configuration."""
    payload = {
        "system": dataclasses.asdict(run_cfg.system),
        "model": dataclasses.asdict(run_cfg.model),
        "train": dataclasses.asdict(run_cfg.train),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def dbm_to_watt(dbm: float) -> float:
    """10^((dBm - 30)/10); -inf dBm maps to exactly zero watts."""
    if math.isinf(dbm) and dbm < 0:
        return 0.0
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    if watt <= 0:
        raise ConfigError("watt_to_dbm requires positive power")
    return 10.0 * math.log10(watt) + 30.0
