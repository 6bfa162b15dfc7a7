import dataclasses

import numpy as np
import pytest
from scipy import stats

from nfbeam.config import preset
from nfbeam.dataset import (
    build_sample,
    generate_samples,
    load_arrays,
    make_assets,
    preprocess,
    read_dataset,
    regenerate_channel_frames,
    sample_trajectory,
    split_indices,
    write_dataset,
)
from nfbeam.errors import DataFormatError, DegenerateInputError
from nfbeam.sounding import MeasurementFrame


def test_trajectory_uniformity(desk_cfg):
    rng = np.random.default_rng(0)
    trajs = [sample_trajectory(desk_cfg, rng) for _ in range(10_000)]
    angles = np.array([t.initial_angle_rad for t in trajs])
    lo, hi = np.deg2rad(desk_cfg.angle_range_deg)
    assert angles.min() >= lo and angles.max() <= hi
    p = stats.kstest(angles, "uniform", args=(lo, hi - lo)).pvalue
    assert p > 0.01
    dists = np.array([t.initial_distance_m for t in trajs])
    p = stats.kstest(dists, "uniform", args=(1.0, 3.0)).pvalue
    assert p > 0.01


def test_trajectory_speed_conversion(desk_cfg):
    cfg = dataclasses.replace(desk_cfg, speed_range_kmh=(30.0, 30.0))
    traj = sample_trajectory(cfg, np.random.default_rng(1))
    assert np.linalg.norm(traj.velocity_mps) == pytest.approx(30.0 / 3.6)
    assert np.linalg.norm(traj.velocity_mps) == pytest.approx(8.333, abs=1e-3)


def test_trajectory_zero_speed(desk_cfg):
    cfg = dataclasses.replace(desk_cfg, speed_range_kmh=(0.0, 0.0))
    traj = sample_trajectory(cfg, np.random.default_rng(2))
    assert np.allclose(traj.frame_positions, traj.frame_positions[0])


def _frames(values):
    return [MeasurementFrame(Y=v, frame_index=i, noise_power_dbm=-110.0) for i, v in enumerate(values)]


def test_preprocess_standardizes(rng):
    raw = _frames([rng.normal(size=(4, 6)) + 1j * rng.normal(size=(4, 6)) for _ in range(3)])
    tensor = preprocess(raw)
    assert tensor.shape == (3, 2, 4, 6)
    for p in range(3):
        block = tensor[p]
        assert abs(block.mean()) <= 1e-6
        assert abs(block.std() - 1.0) <= 1e-6


def test_preprocess_affine_invariance(rng):
    ys = [rng.normal(size=(4, 6)) + 1j * rng.normal(size=(4, 6)) for _ in range(2)]
    a = preprocess(_frames(ys))
    b = preprocess(_frames([10.0 * y for y in ys]))
    assert np.allclose(a, b, atol=1e-12)


def test_preprocess_rejects_constant_frame():
    # Constant real and imaginary planes leave nothing to standardize.
    with pytest.raises(DegenerateInputError):
        preprocess(_frames([(1.0 + 1.0j) * np.ones((3, 3))]))


def test_build_sample_shapes_and_determinism(desk_cfg):
    a = build_sample(desk_cfg, 99, 3)
    b = build_sample(desk_cfg, 99, 3)
    assert a.pilot_tensor.shape == (5, 2, 8, 8)
    assert a.labels.shape == (6,)
    assert a.pilot_tensor.dtype == np.float32
    assert np.array_equal(a.pilot_tensor, b.pilot_tensor)
    assert np.array_equal(a.labels, b.labels)
    assert np.all(a.labels >= 0) and np.all(a.labels < desk_cfg.codebook_size)


def test_build_sample_static_noiseless_labels_constant(pure_los_cfg):
    cfg = dataclasses.replace(
        pure_los_cfg, speed_range_kmh=(0.0, 0.0), noise_power_dbm=-np.inf
    )
    for idx in range(5):
        sample = build_sample(cfg, 7, idx)
        assert np.all(sample.labels == sample.labels[0])


def test_per_frame_standardization_recorded(desk_cfg):
    sample = build_sample(desk_cfg, 5, 0)
    for p in range(desk_cfg.context_frames):
        block = sample.pilot_tensor[p].astype(np.float64)
        assert abs(block.mean()) <= 1e-6
        assert abs(block.std() - 1.0) <= 1e-6
    assert sample.meta.frame_mu.shape == (desk_cfg.context_frames,)
    assert np.all(sample.meta.frame_sigma > 0)


def test_labels_stay_in_user_sector(pure_los_cfg):
    # Frame-0 labels of pure-LoS samples stay within the +-60 degree sector,
    # up to half an angular grid step.
    assets = make_assets(pure_los_cfg)
    samples = generate_samples(pure_los_cfg, 300, master_seed=11)
    half_step = 1.0 / pure_los_cfg.num_bs_antennas
    sector = np.sin(np.deg2rad(60.0)) + half_step + 1e-9
    for s in samples:
        angle = assets.near_field.angles_rad[s.labels[0]]
        assert abs(np.sin(angle)) <= sector


def test_regenerate_channel_frames_consistent(desk_cfg):
    sample = build_sample(desk_cfg, 21, 4)
    frames = regenerate_channel_frames(desk_cfg, 21, 4)
    labels = [np.abs(f.H @ make_assets(desk_cfg).near_field.codewords).sum(0).argmax() for f in frames]
    assert np.array_equal(np.array(labels, dtype=np.int32), sample.labels)


def test_roundtrip_is_lossless(desk_cfg, tmp_path):
    samples = generate_samples(desk_cfg, 20, master_seed=5)
    path = str(tmp_path / "d.nfbd")
    write_dataset(path, desk_cfg, samples, master_seed=5)
    header, it = read_dataset(path)
    assert header.sample_count == 20
    assert header.system == desk_cfg
    assert header.norm_scheme_id == 1
    back = list(it)
    for a, b in zip(samples, back):
        assert np.array_equal(a.pilot_tensor, b.pilot_tensor)
        assert np.array_equal(a.labels, b.labels)
        assert a.meta.sample_index == b.meta.sample_index
        assert np.array_equal(a.meta.frame_mu, b.meta.frame_mu)


def test_read_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.nfbd"
    path.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(DataFormatError):
        read_dataset(str(path))


def test_read_rejects_truncation(desk_cfg, tmp_path):
    samples = generate_samples(desk_cfg, 3, master_seed=5)
    path = str(tmp_path / "t.nfbd")
    write_dataset(path, desk_cfg, samples, master_seed=5)
    data = open(path, "rb").read()
    open(path, "wb").write(data[:-40])
    _, it = read_dataset(path)
    with pytest.raises(DataFormatError):
        list(it)


def test_empty_dataset_roundtrip(desk_cfg, tmp_path):
    path = str(tmp_path / "empty.nfbd")
    write_dataset(path, desk_cfg, [], master_seed=0)
    header, tensors, labels, metas = load_arrays(path)
    assert header.sample_count == 0
    assert tensors.shape[0] == 0 and labels.shape[0] == 0 and metas == []


def test_byte_stream_reproducible(desk_cfg, tmp_path):
    a, b = str(tmp_path / "a.nfbd"), str(tmp_path / "b.nfbd")
    write_dataset(a, desk_cfg, generate_samples(desk_cfg, 10, 77), 77)
    write_dataset(b, desk_cfg, generate_samples(desk_cfg, 10, 77), 77)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_parallel_generation_matches_serial(desk_cfg):
    serial = generate_samples(desk_cfg, 12, master_seed=9, jobs=1)
    parallel = generate_samples(desk_cfg, 12, master_seed=9, jobs=2)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.pilot_tensor, b.pilot_tensor)
        assert np.array_equal(a.labels, b.labels)


def test_split_indices():
    train, val, test = split_indices(100)
    assert (train.size, val.size, test.size) == (80, 10, 10)
    assert np.array_equal(np.concatenate([train, val, test]), np.arange(100))
