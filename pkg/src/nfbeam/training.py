"""Masked pretraining, next-frame finetuning, and the optimizer.

Pretraining supervises every context position with that frame's own oracle
label after masking a fraction alpha of frames (80% zeroed, 10% replaced by
another sample's frame at the same slot, 10% kept). Finetuning trains the
last-position output against the frame-(P+1) label, optionally freezing the
CNN and the first transformer block.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dataset import split_indices
from .errors import TrainingError
from .nn import BeamPredictionModel, Context

ACTION_NONE, ACTION_ZERO, ACTION_RANDOM, ACTION_KEEP = 0, 1, 2, 3

# Prefixes frozen during finetuning: the CNN encoder and the first block.
FROZEN_PREFIXES = ("cnn.", "blocks.0.")


@dataclass(frozen=True)
class MaskPlan:
    """Which (sample, frame) slots were selected and what happened to them."""

    masked: np.ndarray  # (B, P) bool
    action: np.ndarray  # (B, P) uint8, ACTION_* codes


def apply_mask(
    batch: np.ndarray, alpha: float, rng: np.random.Generator
) -> tuple[np.ndarray, MaskPlan]:
    """Mask a fraction alpha of frames with the 80/10/10 action policy.

    "random" substitutes the same frame slot from another sample in the
    batch; with a single-sample batch those positions stay unchanged. "keep"
    leaves the tensor intact but still flags the position in the plan.
    """
    if not 0.0 <= alpha < 1.0:
        raise TrainingError(f"mask alpha {alpha} outside [0, 1)")
    b, p = batch.shape[:2]
    masked = rng.random((b, p)) < alpha
    action_draw = rng.random((b, p))
    donor_draw = rng.integers(0, max(b - 1, 1), size=(b, p))
    out = batch.copy()
    action = np.zeros((b, p), dtype=np.uint8)
    zero_sel = masked & (action_draw < 0.8)
    rand_sel = masked & (action_draw >= 0.8) & (action_draw < 0.9)
    keep_sel = masked & (action_draw >= 0.9)
    action[zero_sel] = ACTION_ZERO
    action[rand_sel] = ACTION_RANDOM
    action[keep_sel] = ACTION_KEEP
    out[zero_sel] = 0.0
    if b > 1:
        rows, cols = np.nonzero(rand_sel)
        donors = donor_draw[rows, cols]
        donors = donors + (donors >= rows)  # uniform over the other samples
        out[rows, cols] = batch[donors, cols]
    return out, MaskPlan(masked=masked, action=action)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise TrainingError("label outside codebook range")


def cross_entropy_grad(
    logits: np.ndarray, labels: np.ndarray, select: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over selected positions and its logits gradient.

    logits (..., N), labels (...); select is an optional boolean mask over
    the leading axes. Zero selected positions yield loss 0 and zero grads.
    """
    _check_labels(labels, logits.shape[-1])
    logp = _log_softmax(logits.astype(np.float64))
    onehot_nll = -np.take_along_axis(logp, labels[..., None].astype(np.int64), axis=-1)[..., 0]
    if select is None:
        select = np.ones(labels.shape, dtype=bool)
    count = int(select.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    loss = float(onehot_nll[select].sum() / count)
    grad = np.exp(logp).reshape(-1, logits.shape[-1])
    grad[np.arange(grad.shape[0]), labels.reshape(-1).astype(np.int64)] -= 1.0
    grad = grad.reshape(logits.shape) * (select[..., None] / count)
    return loss, grad.astype(logits.dtype)


def pretrain_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Cross-entropy over all B*P positions against per-frame labels."""
    return cross_entropy_grad(logits, labels)[0]


def masked_only_pretrain_loss(
    logits: np.ndarray, labels: np.ndarray, plan: MaskPlan
) -> float:
    """Ablation: supervision restricted to the masked positions."""
    return cross_entropy_grad(logits, labels, plan.masked)[0]


def finetune_loss(logits: np.ndarray, next_labels: np.ndarray) -> float:
    """Cross-entropy of the last-position logits against frame-(P+1) labels."""
    return cross_entropy_grad(logits[:, -1, :], next_labels)[0]


def predict_indices(logits: np.ndarray) -> np.ndarray:
    """The predicted beam: argmax of the last-position logits."""
    return logits[:, -1, :].argmax(axis=-1)


@dataclass
class OptimizerState:
    """Adam first/second moments mirroring the parameter tree."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    schedule: str = "cosine"


def init_optimizer(params: dict[str, np.ndarray], schedule: str = "cosine") -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        schedule=schedule,
    )


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    grad_clip: float | None = 1.0,
) -> None:
    """In-place Adam update with bias correction and global-norm clipping."""
    total_sq = 0.0
    for name, g in grads.items():
        sq = float(np.vdot(g, g).real)
        if not math.isfinite(sq):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        total_sq += sq
    norm = math.sqrt(total_sq)
    scale = 1.0
    if grad_clip is not None and norm > grad_clip:
        scale = grad_clip / norm
    state.step += 1
    bias1 = 1.0 - beta1**state.step
    bias2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name] * scale
        m, v = state.m[name], state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def schedule_lr(base_lr: float, step: int, total_steps: int, kind: str) -> float:
    """Cosine decay from base_lr to 0 over total_steps, or constant."""
    if kind == "constant" or total_steps <= 0:
        return base_lr
    frac = min(step / total_steps, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def frozen_param_names(model: BeamPredictionModel) -> list[str]:
    return [k for k in model.params() if k.startswith(FROZEN_PREFIXES)]


def _zero_frozen(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name.startswith(FROZEN_PREFIXES):
            g[...] = 0.0


@dataclass
class TrainResult:
    model: BeamPredictionModel
    history: list[dict] = field(default_factory=list)

    def epochs_to(
        self, threshold: float, stage: str, split: str = "val", metric: str = "accuracy"
    ) -> int | None:
        """First epoch whose logged metric reaches the threshold, else None."""
        for row in self.history:
            if row["stage"] == stage and row["split"] == split and row[metric] >= threshold:
                return row["epoch"]
        return None


def _snapshot(model: BeamPredictionModel) -> dict[str, np.ndarray]:
    arrays = {**model.params(), **model.bn_state()}
    return {k: v.copy() for k, v in arrays.items()}


def _restore(model: BeamPredictionModel, snap: dict[str, np.ndarray]) -> None:
    arrays = {**model.params(), **model.bn_state()}
    for k, v in arrays.items():
        v[...] = snap[k]


def _validate(model, tensors, labels, idx, *, next_frame_only: bool):
    if idx.size == 0:
        return float("nan"), float("nan")
    logits = model.eval_logits(tensors[idx])
    if next_frame_only:
        y = labels[idx, -1]
        loss = finetune_loss(logits, y)
        acc = float((predict_indices(logits) == y).mean())
    else:
        y = labels[idx, : logits.shape[1]]
        loss = pretrain_loss(logits, y)
        acc = float((logits.argmax(axis=-1) == y).mean())
    return loss, acc


def pretrain(
    tensors: np.ndarray,
    labels: np.ndarray,
    run_cfg: RunConfig,
    model: BeamPredictionModel | None = None,
) -> TrainResult:
    """Masked pretraining over the 80% train split with val-loss retention."""
    tc = run_cfg.train
    p = run_cfg.system.context_frames
    if labels.shape[1] != p + 1:
        raise TrainingError("dataset labels do not cover P+1 frames")
    if model is None:
        model = BeamPredictionModel(run_cfg.model, run_cfg.system, init_seed=tc.rng_seed)
    if model.num_classes != run_cfg.system.codebook_size:
        raise TrainingError("model head size does not match the codebook")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=tc.rng_seed, spawn_key=(1,)))
    train_idx, val_idx, _ = split_indices(tensors.shape[0])
    state = init_optimizer(model.params(), tc.lr_schedule)
    steps_per_epoch = max(1, math.ceil(train_idx.size / tc.batch_size))
    total_steps = steps_per_epoch * tc.pretrain_epochs
    result = TrainResult(model=model)
    best_loss, best_snap = math.inf, None
    frame_labels = labels[:, :p]
    for epoch in range(1, tc.pretrain_epochs + 1):
        perm = rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for start in range(0, perm.size, tc.batch_size):
            idx = perm[start : start + tc.batch_size]
            x = tensors[idx]
            masked, plan = apply_mask(x, tc.mask_alpha, rng)
            ctx = Context(train=True, rng=rng)
            logits = model.forward(masked, ctx)
            select = plan.masked if tc.masked_only_loss else None
            loss, dlogits = cross_entropy_grad(logits, frame_labels[idx], select)
            model.backward(dlogits)
            grads = model.grads()
            if tc.freeze_stage == "pretrain":
                _zero_frozen(grads)
            lr = schedule_lr(tc.lr_pretrain, state.step, total_steps, tc.lr_schedule)
            optimizer_step(model.params(), grads, state, lr, grad_clip=tc.grad_clip)
            epoch_loss += loss * idx.size
            seen += idx.size
        val_loss, val_acc = _validate(model, tensors, labels, val_idx, next_frame_only=False)
        result.history.append(
            {"stage": "pretrain", "epoch": epoch, "split": "train",
             "loss": epoch_loss / max(seen, 1), "accuracy": float("nan")}
        )
        result.history.append(
            {"stage": "pretrain", "epoch": epoch, "split": "val",
             "loss": val_loss, "accuracy": val_acc}
        )
        if val_idx.size and val_loss < best_loss:
            best_loss, best_snap = val_loss, _snapshot(model)
    if best_snap is not None:
        _restore(model, best_snap)
    return result


def finetune(
    tensors: np.ndarray,
    labels: np.ndarray,
    run_cfg: RunConfig,
    model: BeamPredictionModel | None = None,
    *,
    direct: bool = False,
) -> TrainResult:
    """Next-frame training; freezes CNN + first block unless direct.

    With direct=True the model starts from scratch and nothing is frozen
    (the paper's direct-training baseline); otherwise `model` is the
    pretrained network.
    """
    tc = run_cfg.train
    if model is None:
        if not direct:
            raise TrainingError("finetune requires a pretrained model unless direct=True")
        model = BeamPredictionModel(run_cfg.model, run_cfg.system, init_seed=tc.rng_seed)
    if model.num_classes != run_cfg.system.codebook_size:
        raise TrainingError("checkpoint head size does not match the codebook")
    freeze = (tc.freeze_stage == "finetune") and not direct
    rng = np.random.default_rng(np.random.SeedSequence(entropy=tc.rng_seed, spawn_key=(2,)))
    train_idx, val_idx, _ = split_indices(tensors.shape[0])
    state = init_optimizer(model.params(), tc.lr_schedule)
    steps_per_epoch = max(1, math.ceil(train_idx.size / tc.batch_size))
    total_steps = steps_per_epoch * tc.finetune_epochs
    result = TrainResult(model=model)
    best_acc, best_snap = -math.inf, None
    next_labels = labels[:, -1]
    for epoch in range(1, tc.finetune_epochs + 1):
        perm = rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for start in range(0, perm.size, tc.batch_size):
            idx = perm[start : start + tc.batch_size]
            ctx = Context(train=True, rng=rng)
            logits = model.forward(tensors[idx], ctx)
            loss, dlast = cross_entropy_grad(logits[:, -1, :], next_labels[idx])
            dlogits = np.zeros_like(logits)
            dlogits[:, -1, :] = dlast
            model.backward(dlogits)
            grads = model.grads()
            if freeze:
                _zero_frozen(grads)
            lr = schedule_lr(tc.lr_finetune, state.step, total_steps, tc.lr_schedule)
            optimizer_step(model.params(), grads, state, lr, grad_clip=tc.grad_clip)
            epoch_loss += loss * idx.size
            seen += idx.size
        val_loss, val_acc = _validate(model, tensors, labels, val_idx, next_frame_only=True)
        result.history.append(
            {"stage": "direct" if direct else "finetune", "epoch": epoch, "split": "train",
             "loss": epoch_loss / max(seen, 1), "accuracy": float("nan")}
        )
        result.history.append(
            {"stage": "direct" if direct else "finetune", "epoch": epoch, "split": "val",
             "loss": val_loss, "accuracy": val_acc}
        )
        if val_idx.size and val_acc > best_acc:
            best_acc, best_snap = val_acc, _snapshot(model)
    if best_snap is not None:
        _restore(model, best_snap)
    return result


def write_training_log(path: str, history: list[dict]) -> None:
    """CSV log: stage, epoch, split, loss, accuracy."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["stage", "epoch", "split", "loss", "accuracy"])
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in writer.fieldnames})
