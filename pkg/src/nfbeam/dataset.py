"""Sample generation and the on-disk dataset format.

A sample is P preprocessed pilot tensors (frames 1..P) plus P+1 oracle
labels (the extra one is the prediction target at frame P+1). Generation is
fully determined by (config, master seed): per-sample RNG streams are spawned
from the master seed by sample index, and the stored stream identity lets
evaluation regenerate the frame-(P+1) channel for NBG without storing it.

File layout (little-endian): magic "NFBD", u32 format version, u32 header
length, JSON header text, then per sample a fixed-size record of metadata
(f64), labels (i32), and the pilot tensor (f32).
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelFrame, UserTrajectory, generate_frame_sequence, make_trajectory
from .codebook import Codebook, DigitalSchedule, digital_schedule, near_field_codebook, widebeam_codebook
from .config import SystemConfig
from .errors import DataFormatError, DegenerateInputError, DimensionError
from .oracle import label_frames
from .sounding import MeasurementFrame, PilotMatrix, measure_frame, pilot_matrix

_MAGIC = b"NFBD"
_FORMAT_VERSION = 1
NORMALIZATION_SCHEME_PER_FRAME = 1


@dataclass(frozen=True)
class SampleMeta:
    """Trajectory summary plus the RNG identity needed for regeneration."""

    master_seed: int
    sample_index: int
    noise_power_dbm: float
    initial_angle_rad: float
    initial_distance_m: float
    velocity_mps: tuple[float, float]
    frame_mu: np.ndarray  # (P,) per-frame standardization mean
    frame_sigma: np.ndarray  # (P,)


@dataclass(frozen=True)
class Sample:
    pilot_tensor: np.ndarray  # (P, 2, K, G) float32, standardized per frame
    labels: np.ndarray  # (P+1,) int32 oracle labels
    meta: SampleMeta


@dataclass(frozen=True)
class DatasetHeader:
    sample_count: int
    norm_scheme_id: int
    master_seed: int
    system: SystemConfig
    codebook_angles_rad: np.ndarray
    codebook_distances_m: np.ndarray
    tensor_shape: tuple[int, int, int, int]
    labels_len: int


@dataclass(frozen=True)
class PipelineAssets:
    """Per-config immutable objects shared across sample builds."""

    near_field: Codebook
    widebeams: Codebook
    schedule: DigitalSchedule
    pilots: PilotMatrix


@functools.lru_cache(maxsize=8)
def make_assets(cfg: SystemConfig) -> PipelineAssets:
    return PipelineAssets(
        near_field=near_field_codebook(cfg),
        widebeams=widebeam_codebook(cfg),
        schedule=digital_schedule(cfg),
        pilots=pilot_matrix(cfg),
    )


def sample_trajectory(cfg: SystemConfig, rng: np.random.Generator) -> UserTrajectory:
    """Initial angle/distance/speed uniform in their ranges, heading uniform."""
    lo_deg, hi_deg = cfg.angle_range_deg
    angle = np.deg2rad(rng.uniform(lo_deg, hi_deg))
    distance = rng.uniform(*cfg.distance_range_m)
    speed_mps = rng.uniform(*cfg.speed_range_kmh) / 3.6
    heading = rng.uniform(0.0, 2.0 * np.pi)
    velocity = speed_mps * np.array([np.cos(heading), np.sin(heading)])
    return make_trajectory(angle, distance, velocity, cfg.context_frames + 1)


def _standardize(block: np.ndarray) -> tuple[np.ndarray, float, float]:
    mu = float(block.mean())
    sigma = float(block.std())
    if sigma == 0.0:
        raise DegenerateInputError("zero-variance measurement frame")
    return (block - mu) / sigma, mu, sigma


def preprocess(raw: list[MeasurementFrame]) -> np.ndarray:
    """Real/imag split then per-frame standardization; (P, 2, K, G) float."""
    out = []
    for frame in raw:
        block = np.stack([frame.Y.real, frame.Y.imag], axis=0)
        out.append(_standardize(block)[0])
    return np.stack(out, axis=0)


def sample_rng_seed(master_seed: int, sample_index: int) -> np.random.SeedSequence:
    """Independent per-sample stream, stable in (master seed, index)."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(sample_index,))


def build_sample(
    cfg: SystemConfig,
    master_seed: int,
    sample_index: int,
    assets: PipelineAssets | None = None,
) -> Sample:
    """Trajectory -> P+1 channels -> P+1 measurements -> labels and tensor.

    Frames 1..P become the model input tensor; frame P+1 contributes only
    its oracle label (the prediction target).
    """
    if assets is None:
        assets = make_assets(cfg)
    rng = np.random.default_rng(sample_rng_seed(master_seed, sample_index))
    trajectory = sample_trajectory(cfg, rng)
    frames = generate_frame_sequence(cfg, trajectory, rng)
    labels = label_frames(frames, assets.near_field)
    measurements = [
        measure_frame(f, assets.pilots, assets.widebeams, assets.schedule, cfg, rng)
        for f in frames
    ]
    context = measurements[: cfg.context_frames]
    blocks, mus, sigmas = [], [], []
    for m in context:
        block = np.stack([m.Y.real, m.Y.imag], axis=0)
        normed, mu, sigma = _standardize(block)
        blocks.append(normed)
        mus.append(mu)
        sigmas.append(sigma)
    tensor = np.stack(blocks, axis=0).astype(np.float32)
    meta = SampleMeta(
        master_seed=master_seed,
        sample_index=sample_index,
        noise_power_dbm=cfg.noise_power_dbm,
        initial_angle_rad=trajectory.initial_angle_rad,
        initial_distance_m=trajectory.initial_distance_m,
        velocity_mps=(float(trajectory.velocity_mps[0]), float(trajectory.velocity_mps[1])),
        frame_mu=np.array(mus),
        frame_sigma=np.array(sigmas),
    )
    return Sample(pilot_tensor=tensor, labels=labels, meta=meta)


def regenerate_channel_frames(
    cfg: SystemConfig, master_seed: int, sample_index: int
) -> list[ChannelFrame]:
    """Rebuild a sample's P+1 channel frames from its stored RNG identity.

    The trajectory and clusters are the first draws on the sample stream, so
    skipping the measurement stage reproduces the channels exactly.
    """
    rng = np.random.default_rng(sample_rng_seed(master_seed, sample_index))
    trajectory = sample_trajectory(cfg, rng)
    return generate_frame_sequence(cfg, trajectory, rng)


def _build_sample_job(args) -> Sample:
    cfg, master_seed, index = args
    return build_sample(cfg, master_seed, index, make_assets(cfg))


def generate_samples(
    cfg: SystemConfig, count: int, master_seed: int, jobs: int = 1
) -> list[Sample]:
    """Deterministic list of samples; identical output for any jobs value."""
    if jobs <= 1:
        assets = make_assets(cfg)
        return [build_sample(cfg, master_seed, i, assets) for i in range(count)]
    work = [(cfg, master_seed, i) for i in range(count)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_build_sample_job, work, chunksize=32))


def split_indices(count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """80/10/10 train/val/test split by contiguous index ranges."""
    n_train = int(count * 0.8)
    n_val = int(count * 0.1)
    idx = np.arange(count)
    return idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :]


def _header_dict(cfg: SystemConfig, count: int, master_seed: int) -> dict:
    nf = make_assets(cfg).near_field
    return {
        "format": "nfbeam-dataset",
        "version": _FORMAT_VERSION,
        "sample_count": count,
        "norm_scheme_id": NORMALIZATION_SCHEME_PER_FRAME,
        "master_seed": master_seed,
        "system": dataclasses.asdict(cfg),
        "codebook": {
            "angles_rad": nf.angles_rad.tolist(),
            "distances_m": nf.distances_m.tolist(),
        },
        "tensor_shape": [cfg.context_frames, 2, cfg.num_subcarriers, cfg.widebeam_count],
        "labels_len": cfg.context_frames + 1,
    }


def _header_from_dict(d: dict) -> DatasetHeader:
    sys_raw = dict(d["system"])
    for key in ("distance_range_m", "angle_range_deg", "speed_range_kmh"):
        sys_raw[key] = tuple(sys_raw[key])
    cfg = SystemConfig(**sys_raw)
    return DatasetHeader(
        sample_count=d["sample_count"],
        norm_scheme_id=d["norm_scheme_id"],
        master_seed=d["master_seed"],
        system=cfg,
        codebook_angles_rad=np.array(d["codebook"]["angles_rad"]),
        codebook_distances_m=np.array(d["codebook"]["distances_m"]),
        tensor_shape=tuple(d["tensor_shape"]),
        labels_len=d["labels_len"],
    )


def write_dataset(path: str, cfg: SystemConfig, samples: list[Sample], master_seed: int) -> None:
    """Serialize samples; lossless round trip, atomic replace on completion."""
    header = json.dumps(_header_dict(cfg, len(samples), master_seed), sort_keys=True).encode()
    p = cfg.context_frames
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, len(header)))
        fh.write(header)
        for s in samples:
            if s.pilot_tensor.shape != (p, 2, cfg.num_subcarriers, cfg.widebeam_count):
                raise DimensionError("sample tensor shape inconsistent with config")
            fh.write(
                struct.pack(
                    "<qqd ddd d",
                    s.meta.master_seed,
                    s.meta.sample_index,
                    s.meta.noise_power_dbm,
                    s.meta.initial_angle_rad,
                    s.meta.initial_distance_m,
                    s.meta.velocity_mps[0],
                    s.meta.velocity_mps[1],
                )
            )
            fh.write(s.meta.frame_mu.astype("<f8").tobytes())
            fh.write(s.meta.frame_sigma.astype("<f8").tobytes())
            fh.write(s.labels.astype("<i4").tobytes())
            fh.write(s.pilot_tensor.astype("<f4").tobytes())
    os.replace(tmp, path)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError("truncated dataset file")
    return data


def read_dataset(path: str):
    """Validate the header and return (DatasetHeader, sample iterator)."""
    fh = open(path, "rb")
    try:
        if _read_exact(fh, 4) != _MAGIC:
            raise DataFormatError("bad magic; not an nfbeam dataset")
        version, header_len = struct.unpack("<II", _read_exact(fh, 8))
        if version != _FORMAT_VERSION:
            raise DataFormatError(f"unsupported dataset version {version}")
        header = _header_from_dict(json.loads(_read_exact(fh, header_len)))
    except Exception:
        fh.close()
        raise

    p, _, k, g = header.tensor_shape
    if header.tensor_shape != (header.system.context_frames, 2, header.system.num_subcarriers, header.system.widebeam_count):
        fh.close()
        raise DataFormatError("header tensor shape inconsistent with its config")

    def samples():
        try:
            meta_len = struct.calcsize("<qqd ddd d")
            for _ in range(header.sample_count):
                raw = struct.unpack("<qqd ddd d", _read_exact(fh, meta_len))
                mu = np.frombuffer(_read_exact(fh, 8 * p), dtype="<f8")
                sigma = np.frombuffer(_read_exact(fh, 8 * p), dtype="<f8")
                labels = np.frombuffer(_read_exact(fh, 4 * header.labels_len), dtype="<i4")
                tensor = np.frombuffer(
                    _read_exact(fh, 4 * p * 2 * k * g), dtype="<f4"
                ).reshape(p, 2, k, g)
                meta = SampleMeta(
                    master_seed=raw[0],
                    sample_index=raw[1],
                    noise_power_dbm=raw[2],
                    initial_angle_rad=raw[3],
                    initial_distance_m=raw[4],
                    velocity_mps=(raw[5], raw[6]),
                    frame_mu=mu,
                    frame_sigma=sigma,
                )
                yield Sample(pilot_tensor=tensor, labels=labels, meta=meta)
        finally:
            fh.close()

    return header, samples()


def load_arrays(path: str):
    """Load a whole dataset into memory: (header, tensors, labels, metas)."""
    header, it = read_dataset(path)
    tensors, labels, metas = [], [], []
    for s in it:
        tensors.append(s.pilot_tensor)
        labels.append(s.labels)
        metas.append(s.meta)
    if header.sample_count == 0:
        p, c, k, g = header.tensor_shape
        return (
            header,
            np.zeros((0, p, c, k, g), dtype=np.float32),
            np.zeros((0, header.labels_len), dtype=np.int32),
            metas,
        )
    return header, np.stack(tensors), np.stack(labels), metas
