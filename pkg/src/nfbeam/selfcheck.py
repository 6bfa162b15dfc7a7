"""Fast invariant suite behind the `selfcheck` CLI command.

Each check re-verifies a core contract at desk scale in a few seconds total;
this is the smoke-test path, not a replacement for the pytest suite.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import channel, codebook, sounding
from .config import preset
from .dataset import build_sample, make_assets
from .nn import BeamPredictionModel, Context
from .oracle import label_frame
from .training import apply_mask, cross_entropy_grad


def _check_zc_cazac():
    worst = 0.0
    for k in (7, 8, 60):
        pilots = sounding.zc_pilot(k, sounding.default_roots(k, 4))
        for col in pilots.X.T:
            mods = np.abs(col) * np.sqrt(k)
            worst = max(worst, float(np.abs(mods - 1.0).max()))
            for lag in range(1, k):
                worst = max(worst, abs(np.vdot(np.roll(col, -lag), col)))
    return worst <= 1e-10, f"worst modulus/autocorr deviation {worst:.2e}"


def _check_codebook_norms():
    cfg = preset("desk")
    worst = 0.0
    for cb in (codebook.dft_codebook(cfg), codebook.widebeam_codebook(cfg),
               codebook.near_field_codebook(cfg)):
        norms = np.linalg.norm(cb.codewords, axis=0)
        worst = max(worst, float(np.abs(norms - 1.0).max()))
    wide = codebook.widebeam_codebook(cfg)
    mods = np.abs(wide.codewords) * np.sqrt(cfg.num_bs_antennas)
    worst = max(worst, float(np.abs(mods - 1.0).max()))
    return worst <= 1e-12, f"worst norm/modulus deviation {worst:.2e}"


def _check_digital_schedule():
    cfg = preset("desk")
    sched = codebook.digital_schedule(cfg)
    q = sched.base_matrix
    unitary = float(np.abs(q.conj().T @ q - np.eye(cfg.num_rf_chains)).max())
    perms = all(
        sorted(sched.column_sets[k]) == list(range(cfg.num_rf_chains))
        for k in range(cfg.num_subcarriers)
    )
    return unitary <= 1e-12 and perms, f"unitarity deviation {unitary:.2e}, perms {perms}"


def _check_channel_oracle():
    cfg = dataclasses.replace(preset("desk"), num_clusters=3, rays_per_cluster=2)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        traj = channel.make_trajectory(0.2, 2.5, rng.normal(size=2), cfg.context_frames + 1)
        clusters = channel.generate_clusters(cfg, traj, rng)
        los = channel.los_phase_vector(traj.frame_positions[0], traj.velocity_mps, cfg, 0.0)
        k_r = 10.0 ** (cfg.rician_k_db / 10.0)
        for k in range(cfg.num_subcarriers):
            h = channel.frequency_domain_channel(clusters, los, cfg, k)
            f_k = cfg.carrier_freq_hz + k * cfg.subcarrier_spacing_hz
            ref = np.sqrt(k_r / (k_r + 1.0)) * los * np.exp(-2j * np.pi * f_k * clusters.los_delay_s)
            for p in range(clusters.gains.size):
                steer = channel._spherical_phases(clusters.scatterer_positions[p][None, :], cfg)[0]
                ref = ref + np.sqrt(1.0 / (k_r + 1.0)) * clusters.gains[p] * steer * np.exp(
                    -2j * np.pi * f_k * clusters.delays_s[p]
                )
            worst = max(worst, float(np.abs(h - ref).max()))
    return worst <= 1e-10, f"max abs deviation {worst:.2e}"


def _check_far_field_limit():
    cfg = preset("desk")
    dft = codebook.dft_codebook(cfg)
    rng = np.random.default_rng(3)
    worst = 1.0
    for idx in rng.integers(0, cfg.num_bs_antennas, 8):
        psi = dft.angles_rad[idx]
        b = codebook.near_field_codeword(psi, 1e6 * cfg.wavelength_m, cfg)
        worst = min(worst, abs(np.vdot(dft.codewords[:, idx], b)))
    return worst >= 0.999, f"min correlation {worst:.6f}"


def _check_grid_self_consistency():
    cfg = dataclasses.replace(preset("desk"), num_clusters=0)
    assets = make_assets(cfg)
    nf = assets.near_field
    ok = True
    # Angle index 0 (exact endfire) is excluded: there the distance codewords
    # coincide analytically and the argmax is an exact tie.
    for n in (1, 17, 40, 95):
        psi, r = nf.angles_rad[n], nf.distances_m[n]
        pos = np.array([r * np.sin(psi), r * np.cos(psi)])
        traj = channel.make_trajectory(psi, r, np.zeros(2), cfg.context_frames + 1)
        frames = channel.generate_frame_sequence(cfg, traj, np.random.default_rng(0))
        ok = ok and label_frame(frames[0], nf).index == n and np.allclose(pos, traj.frame_positions[0])
    return ok, "argmax returns the generating grid point"


def _check_mask_statistics():
    rng = np.random.default_rng(11)
    batch = rng.normal(size=(256, 16, 1, 2, 2))
    _, plan = apply_mask(batch, 0.3, rng)
    frac = plan.masked.mean()
    counts = np.bincount(plan.action[plan.masked], minlength=4)[1:]
    splits = counts / max(counts.sum(), 1)
    ok = abs(frac - 0.3) < 0.02 and np.all(np.abs(splits - [0.8, 0.1, 0.1]) < 0.04)
    return ok, f"fraction {frac:.3f}, split {np.round(splits, 3)}"


def _check_gradients():
    cfg = dataclasses.replace(
        preset("desk"), num_subcarriers=4, num_bs_antennas=8, widebeam_count=4,
        num_rf_chains=2, widebeam_group_factor=2, context_frames=3, distance_samples=2,
    )
    from .config import ModelConfig

    mcfg = ModelConfig(init_channels=3, block_channels=4, pool_hw=2, d_emb=8,
                       n_heads=2, n_layers=1, ffn_hidden=16, dropout=0.0)
    model = BeamPredictionModel(mcfg, cfg, init_seed=0, dtype=np.float64)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, cfg.context_frames, 2, 4, 4))
    y = rng.integers(0, model.num_classes, (2, cfg.context_frames))

    def loss_value():
        return cross_entropy_grad(model.forward(x, Context(train=True, rng=rng)), y)[0]

    logits = model.forward(x, Context(train=True, rng=rng))
    _, dlogits = cross_entropy_grad(logits, y)
    model.backward(dlogits)
    grads = {k: v.copy() for k, v in model.grads().items()}
    params = model.params()
    eps, worst = 1e-5, 0.0
    check_rng = np.random.default_rng(17)
    for name in ("cnn.rb1.conv1.W", "blocks.0.attn.wq.W", "head.W", "pos.e"):
        p = params[name]
        flat = check_rng.integers(0, p.size, 3)
        for i in flat:
            old = p.flat[i]
            p.flat[i] = old + eps
            up = loss_value()
            p.flat[i] = old - eps
            down = loss_value()
            p.flat[i] = old
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(grads[name].flat[i]), 1e-12)
            worst = max(worst, abs(fd - grads[name].flat[i]) / denom)
    return worst <= 1e-4, f"worst relative error {worst:.2e}"


def _check_sample_determinism():
    cfg = preset("desk")
    a = build_sample(cfg, 123, 4)
    b = build_sample(cfg, 123, 4)
    ok = (
        np.array_equal(a.pilot_tensor, b.pilot_tensor)
        and np.array_equal(a.labels, b.labels)
        and a.pilot_tensor.shape == (5, 2, 8, 8)
        and a.labels.shape == (6,)
    )
    return ok, "repeat builds are bit-identical with desk shapes"


def _check_paper_arithmetic():
    cfg = preset("paper")
    ok = cfg.pilot_symbols == 8 and cfg.codebook_size == 1280
    return ok, f"pilot symbols {cfg.pilot_symbols}, codebook {cfg.codebook_size}"


CHECKS = [
    ("paper-preset arithmetic", _check_paper_arithmetic),
    ("zc cazac", _check_zc_cazac),
    ("codebook norms", _check_codebook_norms),
    ("digital schedule", _check_digital_schedule),
    ("channel vs direct sum", _check_channel_oracle),
    ("far-field limit", _check_far_field_limit),
    ("grid self-consistency", _check_grid_self_consistency),
    ("mask statistics", _check_mask_statistics),
    ("gradient finite differences", _check_gradients),
    ("sample determinism", _check_sample_determinism),
]


def run_selfcheck() -> tuple[bool, list[tuple[str, bool, str]]]:
    rows = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        rows.append((name, ok, detail))
    return all(ok for _, ok, _ in rows), rows
