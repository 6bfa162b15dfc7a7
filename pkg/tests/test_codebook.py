import dataclasses

import numpy as np
import pytest

from nfbeam.channel import generate_frame_sequence, make_trajectory
from nfbeam.codebook import (
    analog_precoder_for_symbol,
    dft_codebook,
    digital_schedule,
    near_field_codebook,
    near_field_codeword,
    widebeam_codebook,
)
from nfbeam.config import preset
from nfbeam.errors import DegenerateInputError, DimensionError
from nfbeam.oracle import label_frame


def test_dft_columns_orthonormal(desk_cfg):
    cb = dft_codebook(desk_cfg).codewords
    gram = cb.conj().T @ cb
    assert np.abs(gram - np.eye(desk_cfg.num_bs_antennas)).max() < 1e-10


def test_dft_broadside_all_equal():
    cfg = dataclasses.replace(
        preset("desk"), num_bs_antennas=4, widebeam_count=2, num_rf_chains=2, widebeam_group_factor=2
    )
    cb = dft_codebook(cfg)
    broadside = int(np.argmin(np.abs(cb.angles_rad)))
    col = cb.codewords[:, broadside]
    assert cb.angles_rad[broadside] == pytest.approx(0.0)
    assert np.allclose(col, 0.5)


def test_near_field_codeword_unit_norm(desk_cfg, rng):
    for _ in range(10):
        psi = rng.uniform(-1.0, 1.0)
        r = rng.uniform(*desk_cfg.distance_range_m)
        b = near_field_codeword(psi, r, desk_cfg)
        assert np.linalg.norm(b) == pytest.approx(1.0, abs=1e-12)
        assert np.abs(np.abs(b) * np.sqrt(desk_cfg.num_bs_antennas) - 1.0).max() < 1e-12


def test_near_field_codeword_far_limit(desk_cfg, rng):
    dft = dft_codebook(desk_cfg)
    for idx in rng.integers(0, desk_cfg.num_bs_antennas, 32):
        psi = dft.angles_rad[idx]
        b = near_field_codeword(psi, 1e6 * desk_cfg.wavelength_m, desk_cfg)
        assert np.abs(np.vdot(dft.codewords[:, idx], b)) >= 0.999


def test_near_field_codeword_rejects_bad_distance(desk_cfg):
    with pytest.raises(DegenerateInputError):
        near_field_codeword(0.1, 0.0, desk_cfg)


def test_beamfocusing_gain_at_focal_point(pure_los_cfg, rng):
    # |h b| at the codeword's own focal point recovers the full array gain.
    from nfbeam.channel import los_phase_vector

    for _ in range(5):
        psi = rng.uniform(-np.pi / 3, np.pi / 3)
        r = rng.uniform(*pure_los_cfg.distance_range_m)
        pos = np.array([r * np.sin(psi), r * np.cos(psi)])
        los = los_phase_vector(pos, np.zeros(2), pure_los_cfg, 0.0)
        b = near_field_codeword(psi, r, pure_los_cfg)
        gain = np.abs(los @ b) ** 2 / np.linalg.norm(los) ** 2
        assert gain >= 0.99


def test_near_field_codebook_sizes(desk_cfg, paper_cfg):
    assert near_field_codebook(desk_cfg).size == 96
    assert near_field_codebook(paper_cfg).size == 1280


def test_near_field_codebook_layout_and_norms(desk_cfg):
    nf = near_field_codebook(desk_cfg)
    n = desk_cfg.num_bs_antennas
    # distance-major layout: index = distance_idx * N_BS + angle_idx
    for m in range(desk_cfg.distance_samples):
        for s in (0, 5, n - 1):
            idx = m * n + s
            expected = near_field_codeword(nf.angles_rad[idx], nf.distances_m[idx], desk_cfg)
            assert np.array_equal(nf.codewords[:, idx], expected)
    norms = np.linalg.norm(nf.codewords, axis=0)
    assert np.abs(norms - 1.0).max() < 1e-12


def test_widebeam_degenerate_grouping():
    cfg = dataclasses.replace(
        preset("desk"), widebeam_group_factor=1, widebeam_count=32, num_rf_chains=4
    )
    wide = widebeam_codebook(cfg)
    dft = dft_codebook(cfg)
    assert np.allclose(wide.codewords, dft.codewords, atol=1e-14)


def test_widebeam_constant_modulus(desk_cfg, paper_cfg):
    for cfg in (desk_cfg, paper_cfg):
        wide = widebeam_codebook(cfg)
        assert wide.size == cfg.widebeam_count
        mods = np.abs(wide.codewords) * np.sqrt(cfg.num_bs_antennas)
        assert np.abs(mods - 1.0).max() < 1e-12


def test_widebeam_count_paper(paper_cfg):
    assert widebeam_codebook(paper_cfg).size == 64


def test_analog_precoder_partitions_widebeams(desk_cfg):
    wide = widebeam_codebook(desk_cfg)
    seen = []
    for t in range(1, desk_cfg.pilot_symbols + 1):
        f_rf = analog_precoder_for_symbol(t, wide, desk_cfg)
        assert f_rf.shape == (desk_cfg.num_bs_antennas, desk_cfg.num_rf_chains)
        seen.append(f_rf)
    stacked = np.concatenate(seen, axis=1)
    assert np.array_equal(stacked, wide.codewords)  # every beam exactly once
    with pytest.raises(DimensionError):
        analog_precoder_for_symbol(desk_cfg.pilot_symbols + 1, wide, desk_cfg)


def test_analog_precoder_single_symbol():
    cfg = dataclasses.replace(preset("desk"), num_rf_chains=8)
    wide = widebeam_codebook(cfg)
    f_rf = analog_precoder_for_symbol(1, wide, cfg)
    assert np.array_equal(f_rf, wide.codewords)  # G == N_RF: one sweep symbol


def test_digital_schedule_cyclic_shift():
    cfg = dataclasses.replace(preset("desk"), num_rf_chains=4)
    sched = digital_schedule(cfg)
    assert list(sched.column_sets[0]) == [0, 1, 2, 3]
    assert list(sched.column_sets[1]) == [1, 2, 3, 0]
    # period N_RF in the subcarrier index
    assert np.array_equal(sched.column_sets[0], sched.column_sets[4])


def test_digital_schedule_unitary(desk_cfg, paper_cfg):
    for cfg in (desk_cfg, paper_cfg):
        sched = digital_schedule(cfg)
        eye = np.eye(cfg.num_rf_chains)
        assert np.abs(sched.base_matrix.conj().T @ sched.base_matrix - eye).max() < 1e-12
        for k in range(cfg.num_subcarriers):
            f_bb = sched.precoder_for_subcarrier(k)
            assert np.abs(f_bb.conj().T @ f_bb - eye).max() < 1e-12
            assert sorted(sched.column_sets[k]) == list(range(cfg.num_rf_chains))


def test_digital_schedule_identity_variant(desk_cfg):
    cfg = dataclasses.replace(desk_cfg, digital_scheme="identity")
    sched = digital_schedule(cfg)
    for k in range(cfg.num_subcarriers):
        assert np.array_equal(sched.precoder_for_subcarrier(k), np.eye(cfg.num_rf_chains))


def test_grid_self_consistency(pure_los_cfg):
    # A pure-LoS channel at a grid point labels as that grid point, for every
    # point off the degenerate endfire column (angle index 0, sin psi = -1).
    nf = near_field_codebook(pure_los_cfg)
    n = pure_los_cfg.num_bs_antennas
    rng = np.random.default_rng(2)
    picks = [(m, s) for m in range(pure_los_cfg.distance_samples)
             for s in rng.integers(1, n, 6)]
    for m, s in picks:
        idx = m * n + int(s)
        traj = make_trajectory(
            nf.angles_rad[idx], nf.distances_m[idx], np.zeros(2), pure_los_cfg.context_frames + 1
        )
        frames = generate_frame_sequence(pure_los_cfg, traj, np.random.default_rng(0))
        assert label_frame(frames[0], nf).index == idx
