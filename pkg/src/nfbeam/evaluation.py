"""Metrics (accuracy, top-2 accuracy, NBG), parameter sweeps, and reports.

NBG needs the true frame-(P+1) channel, which is regenerated from each
sample's stored RNG identity rather than stored in the dataset. Reports are
a CSV plus one SVG line chart per swept axis; both are byte-deterministic.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, SystemConfig
from .dataset import (
    Sample,
    build_sample,
    generate_samples,
    make_assets,
    regenerate_channel_frames,
    split_indices,
)
from .errors import DimensionError, NfbeamError
from .nn import BeamPredictionModel
from .oracle import nbg
from .training import finetune, predict_indices, pretrain

logger = logging.getLogger(__name__)

SWEEP_AXES = ("noise_dbm", "speed_kmh", "rician_k_db", "mask_alpha")

# Default noise grid brackets the interesting transition region.
DEFAULT_NOISE_GRID_DBM = tuple(float(v) for v in range(-120, -94, 3))
DEFAULT_SPEED_GRID_KMH = tuple(float(v) for v in range(30, 111, 10))


@dataclass(frozen=True)
class MetricsRecord:
    accuracy: float
    top2_accuracy: float
    mean_nbg: float
    sample_count: int
    noise_dbm: float | None = None
    speed_kmh: float | None = None
    rician_k_db: float | None = None
    mask_alpha: float | None = None
    variant: str = "proposed"

    def __post_init__(self):
        if self.top2_accuracy < self.accuracy - 1e-12:
            raise NfbeamError("top-2 accuracy cannot be below top-1 accuracy")


def top2_indices(last_logits: np.ndarray) -> np.ndarray:
    """Indices of the two largest logits per row, highest first."""
    part = np.argpartition(last_logits, -2, axis=-1)[:, -2:]
    row = np.arange(last_logits.shape[0])[:, None]
    order = np.argsort(last_logits[row, part], axis=-1)[:, ::-1]
    return part[row, order]


def evaluate_samples(
    model: BeamPredictionModel,
    tensors: np.ndarray,
    labels: np.ndarray,
    metas,
    cfg: SystemConfig,
    *,
    compute_nbg: bool = True,
    variant: str = "proposed",
    coords: dict | None = None,
) -> MetricsRecord:
    """All three metrics over the given samples."""
    if tensors.shape[0] == 0:
        raise DimensionError("cannot evaluate an empty sample set")
    if tensors.shape[1] != cfg.context_frames:
        raise DimensionError("tensor context length does not match the config")
    logits = model.eval_logits(tensors)
    last = logits[:, -1, :]
    preds = predict_indices(logits)
    truth = labels[:, -1]
    accuracy = float((preds == truth).mean())
    top2 = top2_indices(last)
    top2_accuracy = float((top2 == truth[:, None]).any(axis=1).mean())
    if accuracy <= 2.0 / model.num_classes:
        warnings.warn(
            f"accuracy {accuracy:.4f} is at most twice chance level "
            f"(1/{model.num_classes}); check the pipeline wiring",
            stacklevel=2,
        )
    mean_nbg = float("nan")
    if compute_nbg:
        assets = make_assets(cfg)
        values = []
        for i, meta in enumerate(metas):
            frames = regenerate_channel_frames(cfg, meta.master_seed, meta.sample_index)
            values.append(nbg(frames[-1], int(preds[i]), assets.near_field))
        mean_nbg = float(np.mean(values))
    coords = coords or {}
    return MetricsRecord(
        accuracy=accuracy,
        top2_accuracy=top2_accuracy,
        mean_nbg=mean_nbg,
        sample_count=int(tensors.shape[0]),
        variant=variant,
        **coords,
    )


def _sample_arrays(samples: list[Sample]):
    tensors = np.stack([s.pilot_tensor for s in samples])
    labels = np.stack([s.labels for s in samples])
    metas = [s.meta for s in samples]
    return tensors, labels, metas


def evaluate_dataset(
    model: BeamPredictionModel,
    tensors: np.ndarray,
    labels: np.ndarray,
    metas,
    cfg: SystemConfig,
    split: str = "test",
    **kwargs,
) -> MetricsRecord:
    """Evaluate the chosen split ("test" by default, or "all")."""
    if split == "all":
        return evaluate_samples(model, tensors, labels, metas, cfg, **kwargs)
    if split != "test":
        raise NfbeamError(f"unknown split {split!r}")
    _, _, test_idx = split_indices(tensors.shape[0])
    return evaluate_samples(
        model,
        tensors[test_idx],
        labels[test_idx],
        [metas[i] for i in test_idx],
        cfg,
        **kwargs,
    )


def ablation_simplified_pilots(cfg: SystemConfig) -> SystemConfig:
    """Flat 1/sqrt(K) pilots and an identity digital precoder."""
    return dataclasses.replace(cfg, pilot_scheme="ones", digital_scheme="identity")


def _coord_field(axis: str) -> str:
    return {"noise_dbm": "noise_dbm", "speed_kmh": "speed_kmh",
            "rician_k_db": "rician_k_db", "mask_alpha": "mask_alpha"}[axis]


def sweep(
    axis: str,
    values,
    run_cfg: RunConfig,
    *,
    model: BeamPredictionModel | None = None,
    master_seed: int = 0,
    count: int = 200,
    jobs: int = 1,
    variant: str = "proposed",
) -> list[MetricsRecord]:
    """Evaluate along one axis; test data is regenerated per value with the
    same seeds so only the swept parameter changes. The mask_alpha axis
    retrains the pipeline per value at the configured (desk-scale) budgets.
    """
    if axis not in SWEEP_AXES:
        raise NfbeamError(f"unknown sweep axis {axis!r}; known: {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise NfbeamError("sweep requires at least one value")
    records = []
    for value in values:
        if axis == "mask_alpha":
            rc = dataclasses.replace(
                run_cfg, train=dataclasses.replace(run_cfg.train, mask_alpha=float(value))
            )
            records.append(
                _train_and_eval(rc, master_seed, count, jobs, variant=variant,
                                coords={"mask_alpha": float(value)})
            )
            continue
        if axis == "noise_dbm":
            cfg = dataclasses.replace(run_cfg.system, noise_power_dbm=float(value))
        elif axis == "speed_kmh":
            cfg = dataclasses.replace(run_cfg.system, speed_range_kmh=(float(value), float(value)))
        else:
            cfg = dataclasses.replace(run_cfg.system, rician_k_db=float(value))
        if model is None:
            raise NfbeamError(f"sweep over {axis} requires a trained model")
        samples = generate_samples(cfg, count, master_seed, jobs)
        tensors, labels, metas = _sample_arrays(samples)
        records.append(
            evaluate_samples(
                model, tensors, labels, metas, cfg,
                variant=variant, coords={_coord_field(axis): float(value)},
            )
        )
        logger.info("sweep %s=%s -> acc=%.4f", axis, value, records[-1].accuracy)
    return records


def _train_and_eval(run_cfg: RunConfig, master_seed: int, count: int, jobs: int,
                    *, variant: str, coords: dict) -> MetricsRecord:
    cfg = run_cfg.system
    pre_samples = generate_samples(cfg, count, master_seed, jobs)
    fin_samples = generate_samples(cfg, max(count // 4, 20), master_seed + 1, jobs)
    pre_t, pre_l, _ = _sample_arrays(pre_samples)
    fin_t, fin_l, fin_m = _sample_arrays(fin_samples)
    pre_result = pretrain(pre_t, pre_l, run_cfg)
    fin_result = finetune(fin_t, fin_l, run_cfg, pre_result.model)
    _, _, test_idx = split_indices(fin_t.shape[0])
    return evaluate_samples(
        fin_result.model, fin_t[test_idx], fin_l[test_idx],
        [fin_m[i] for i in test_idx], cfg, variant=variant, coords=coords,
    )


_CSV_FIELDS = [
    "variant", "noise_dbm", "speed_kmh", "rician_k_db", "mask_alpha",
    "accuracy", "top2_accuracy", "mean_nbg", "sample_count",
]


def emit_report(records: list[MetricsRecord], csv_path: str) -> list[str]:
    """Write the CSV and one SVG line chart per axis present in the records.

    Returns the list of files written. Output is byte-deterministic: the SVG
    date metadata is dropped and the hash salt is pinned.
    """
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            row = dataclasses.asdict(rec)
            writer.writerow({k: ("" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k])
                             for k in _CSV_FIELDS})
    written = [csv_path]
    for axis in SWEEP_AXES:
        axis_records = [r for r in records if getattr(r, _coord_field(axis)) is not None]
        if not axis_records:
            continue
        written.append(_plot_axis(axis, axis_records, csv_path))
    return written


def _plot_axis(axis: str, records: list[MetricsRecord], csv_path: str) -> str:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "nfbeam"
    import matplotlib.pyplot as plt

    records = sorted(records, key=lambda r: getattr(r, _coord_field(axis)))
    x = [getattr(r, _coord_field(axis)) for r in records]
    stem = csv_path[:-4] if csv_path.endswith(".csv") else csv_path
    out = f"{stem}_{axis}.svg"
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(x, [r.accuracy for r in records], marker="o", label="accuracy")
    ax.plot(x, [r.top2_accuracy for r in records], marker="s", label="top-2 accuracy")
    nbg_vals = [r.mean_nbg for r in records]
    if not any(np.isnan(v) for v in nbg_vals):
        ax.plot(x, nbg_vals, marker="^", label="mean NBG")
    ax.set_xlabel(axis)
    ax.set_ylabel("metric")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def read_report(csv_path: str) -> list[MetricsRecord]:
    """Inverse of emit_report's CSV for round-trip checks."""
    records = []
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                MetricsRecord(
                    accuracy=float(row["accuracy"]),
                    top2_accuracy=float(row["top2_accuracy"]),
                    mean_nbg=float(row["mean_nbg"]),
                    sample_count=int(row["sample_count"]),
                    noise_dbm=float(row["noise_dbm"]) if row["noise_dbm"] else None,
                    speed_kmh=float(row["speed_kmh"]) if row["speed_kmh"] else None,
                    rician_k_db=float(row["rician_k_db"]) if row["rician_k_db"] else None,
                    mask_alpha=float(row["mask_alpha"]) if row["mask_alpha"] else None,
                    variant=row["variant"],
                )
            )
    return records
