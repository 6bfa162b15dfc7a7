import dataclasses

import numpy as np
import pytest

from nfbeam.channel import ChannelFrame, generate_frame_sequence, make_trajectory
from nfbeam.codebook import near_field_codebook
from nfbeam.config import preset
from nfbeam.errors import DegenerateInputError, DimensionError
from nfbeam.oracle import label_frame, nbg


def naive_label(frame, nf):
    """Independent double-loop reference for the wideband-amplitude argmax."""
    best_idx, best_gain = 0, -1.0
    for n in range(nf.size):
        gain = 0.0
        for k in range(frame.H.shape[0]):
            gain += abs(np.dot(frame.H[k], nf.codewords[:, n]))
        if gain > best_gain:
            best_idx, best_gain = n, gain
    return best_idx


def random_frame(cfg, rng, traj_kwargs=None):
    kwargs = {"angle_rad": rng.uniform(-1.0, 1.0), "distance_m": rng.uniform(*cfg.distance_range_m),
              "velocity_mps": rng.normal(size=2)}
    kwargs.update(traj_kwargs or {})
    traj = make_trajectory(
        kwargs["angle_rad"], kwargs["distance_m"], kwargs["velocity_mps"], cfg.context_frames + 1
    )
    return generate_frame_sequence(cfg, traj, rng)[0]


def test_label_matches_naive_reference(desk_cfg):
    rng = np.random.default_rng(0)
    nf = near_field_codebook(desk_cfg)
    for _ in range(20):
        frame = random_frame(desk_cfg, rng)
        assert label_frame(frame, nf).index == naive_label(frame, nf)


def test_label_matched_filter_single_subcarrier(desk_cfg):
    # K = 1 and h equal to a codeword's conjugate transpose: that codeword wins.
    nf = near_field_codebook(desk_cfg)
    target = 37
    h = nf.codewords[:, target].conj()[None, :]
    frame = ChannelFrame(H=h, frame_index=0, trajectory=None)
    assert label_frame(frame, nf).index == target


def test_label_scale_invariant(desk_cfg, rng):
    nf = near_field_codebook(desk_cfg)
    frame = random_frame(desk_cfg, rng)
    scaled = ChannelFrame(H=1737.5 * frame.H, frame_index=0, trajectory=None)
    assert label_frame(frame, nf).index == label_frame(scaled, nf).index


def test_label_is_gain_optimal(desk_cfg, rng):
    # The selected beam maximizes sum_k |h_k b| over every codeword.
    nf = near_field_codebook(desk_cfg)
    frame = random_frame(desk_cfg, rng)
    gains = np.abs(frame.H @ nf.codewords).sum(axis=0)
    label = label_frame(frame, nf)
    assert np.all(gains[label.index] >= gains)
    assert label.gain_metric == pytest.approx(gains[label.index])


def test_label_tie_breaks_to_lowest_index(desk_cfg):
    nf = near_field_codebook(desk_cfg)
    # Duplicate-codeword tie: a frame equal to a codeword row produces equal
    # gains for identical columns; argmax must take the first.
    dup = dataclasses.replace(nf, codewords=np.concatenate(
        [nf.codewords[:, :1], nf.codewords], axis=1))
    h = dup.codewords[:, 0].conj()[None, :]
    frame = ChannelFrame(H=h, frame_index=0, trajectory=None)
    assert label_frame(frame, dup).index == 0


def test_label_dimension_mismatch(desk_cfg, paper_cfg, rng):
    nf = near_field_codebook(paper_cfg)
    frame = random_frame(desk_cfg, rng)
    with pytest.raises(DimensionError):
        label_frame(frame, nf)


def test_nbg_perfect_prediction_is_one(desk_cfg):
    # A channel proportional to one codeword makes that beam optimal on every
    # subcarrier, so NBG is exactly 1.
    nf = near_field_codebook(desk_cfg)
    h = np.tile(nf.codewords[:, 12].conj()[None, :], (desk_cfg.num_subcarriers, 1))
    frame = ChannelFrame(H=h, frame_index=0, trajectory=None)
    assert nbg(frame, 12, nf) == pytest.approx(1.0)


def test_nbg_bounded(desk_cfg, rng):
    nf = near_field_codebook(desk_cfg)
    frame = random_frame(desk_cfg, rng)
    for predicted in rng.integers(0, nf.size, 8):
        value = nbg(frame, int(predicted), nf)
        assert 0.0 <= value <= 1.0 + 1e-12


def test_nbg_of_oracle_label_pure_los(pure_los_cfg):
    rng = np.random.default_rng(3)
    nf = near_field_codebook(pure_los_cfg)
    for _ in range(10):
        frame = random_frame(pure_los_cfg, rng, {"velocity_mps": np.zeros(2)})
        label = label_frame(frame, nf).index
        assert nbg(frame, label, nf) >= 0.99


def test_nbg_rejects_zero_channel(desk_cfg):
    nf = near_field_codebook(desk_cfg)
    frame = ChannelFrame(
        H=np.zeros((desk_cfg.num_subcarriers, desk_cfg.num_bs_antennas), complex),
        frame_index=0,
        trajectory=None,
    )
    with pytest.raises(DegenerateInputError):
        nbg(frame, 0, nf)


def test_nbg_rejects_out_of_range_index(desk_cfg, rng):
    nf = near_field_codebook(desk_cfg)
    frame = random_frame(desk_cfg, rng)
    with pytest.raises(DimensionError):
        nbg(frame, nf.size, nf)
