"""Exhaustive ground-truth beam labeling and normalized beamforming gain.

The label maximizes the wideband amplitude objective sum_k |h_k b|; NBG is
the power ratio (1/K) sum_k |h_k b_pred|^2 / max_n |h_k b_n|^2. The two
objectives are intentionally different and both are implemented as written.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelFrame
from .codebook import Codebook
from .errors import DegenerateInputError, DimensionError


@dataclass(frozen=True)
class BeamLabel:
    index: int
    gain_metric: float


def label_frame(frame: ChannelFrame, nf: Codebook) -> BeamLabel:
    """Argmax of sum_k |h_k b_n| over the codebook; ties break to lowest index.

    One dense K x N_BS by N_BS x |N| product plus a column reduction; the
    naive double-loop equivalent is kept in the test suite as the oracle.
    """
    if frame.H.shape[1] != nf.codewords.shape[0]:
        raise DimensionError("channel and codebook antenna counts differ")
    gains = np.abs(frame.H @ nf.codewords).sum(axis=0)
    idx = int(np.argmax(gains))
    return BeamLabel(index=idx, gain_metric=float(gains[idx]))


def label_frames(frames, nf: Codebook) -> np.ndarray:
    """Per-frame label indices for a frame sequence."""
    return np.array([label_frame(f, nf).index for f in frames], dtype=np.int32)


def nbg(frame: ChannelFrame, predicted: int, nf: Codebook) -> float:
    """Mean over subcarriers of |h_k b_pred|^2 / max_n |h_k b_n|^2, in [0, 1]."""
    if not 0 <= predicted < nf.size:
        raise DimensionError(f"predicted index {predicted} outside codebook")
    powers = np.abs(frame.H @ nf.codewords) ** 2  # (K, |N|)
    best = powers.max(axis=1)
    if np.any(best == 0.0):
        raise DegenerateInputError("zero channel on some subcarrier; NBG undefined")
    return float(np.mean(powers[:, predicted] / best))
