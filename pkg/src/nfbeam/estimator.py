"""A scikit-learn-compatible facade over the pretrain/finetune pipeline.

BeamPredictor lets the predictor compose with the wider ecosystem (clone,
pipelines, cross-validation): X is the stacked pilot tensor (n, P, 2, K, G)
and y is either per-frame labels (n, P+1), enabling masked pretraining plus
finetuning, or next-frame labels (n,), which trains the direct variant only.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .config import run_preset
from .errors import TrainingError
from .nn import softmax_last
from .training import finetune, pretrain
from .validation import check_labels, check_pilot_tensor


class BeamPredictor(BaseEstimator, ClassifierMixin):
    """Near-field beam index predictor with the sklearn estimator API.

    Parameters mirror the training preset; any left as None falls back to
    the preset value. `random_state` seeds model init, masking, dropout,
    and batch shuffling.
    """

    def __init__(
        self,
        preset="desk",
        alpha=None,
        pretrain_epochs=None,
        finetune_epochs=None,
        lr_pretrain=None,
        lr_finetune=None,
        batch_size=None,
        freeze_stage=None,
        masked_only_loss=None,
        random_state=0,
    ):
        self.preset = preset
        self.alpha = alpha
        self.pretrain_epochs = pretrain_epochs
        self.finetune_epochs = finetune_epochs
        self.lr_pretrain = lr_pretrain
        self.lr_finetune = lr_finetune
        self.batch_size = batch_size
        self.freeze_stage = freeze_stage
        self.masked_only_loss = masked_only_loss
        self.random_state = random_state

    def _run_config(self):
        rc = run_preset(self.preset)
        overrides = {
            "mask_alpha": self.alpha,
            "pretrain_epochs": self.pretrain_epochs,
            "finetune_epochs": self.finetune_epochs,
            "lr_pretrain": self.lr_pretrain,
            "lr_finetune": self.lr_finetune,
            "batch_size": self.batch_size,
            "freeze_stage": self.freeze_stage,
            "masked_only_loss": self.masked_only_loss,
        }
        overrides = {k: v for k, v in overrides.items() if v is not None}
        overrides["rng_seed"] = self.random_state
        return dataclasses.replace(rc, train=dataclasses.replace(rc.train, **overrides))

    def fit(self, X, y):
        run_cfg = self._run_config()
        cfg = run_cfg.system
        X = check_pilot_tensor(X, cfg)
        y = check_labels(y, cfg, X.shape[0])
        if y.ndim == 2:
            pre = pretrain(X, y, run_cfg)
            result = finetune(X, y, run_cfg, pre.model)
            self.pretrain_history_ = pre.history
        else:
            per_frame = np.tile(y[:, None], (1, cfg.context_frames + 1))
            result = finetune(X, per_frame, run_cfg, None, direct=True)
            self.pretrain_history_ = []
        self.model_ = result.model
        self.finetune_history_ = result.history
        self.run_config_ = run_cfg
        self.classes_ = np.arange(cfg.codebook_size)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise TrainingError("BeamPredictor is not fitted; call fit first")

    def predict(self, X):
        self._check_fitted()
        X = check_pilot_tensor(X, self.run_config_.system)
        logits = self.model_.eval_logits(X)
        return logits[:, -1, :].argmax(axis=-1)

    def predict_proba(self, X):
        self._check_fitted()
        X = check_pilot_tensor(X, self.run_config_.system)
        logits = self.model_.eval_logits(X)
        return softmax_last(logits[:, -1, :].astype(np.float64))
