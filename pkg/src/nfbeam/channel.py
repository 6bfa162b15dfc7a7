"""Geometry-based mmWave channel generation for a moving single-antenna user.

Per frame the channel is a K x N_BS matrix: a spherical-wavefront LoS
component plus clustered NLoS taps, Rician-combined and rotated to each
subcarrier frequency f_k = f_c + k*df. Per-element phases use exact
element-to-point distances so the near-field codebook is meaningful at
single-digit-meter ranges.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import FRAME_DURATION_S, SPEED_OF_LIGHT, SystemConfig
from .errors import DegenerateInputError, DimensionError

# Clustered-delay-line parameters the paper leaves to TR 38.901; declared here.
CLUSTER_DELAY_MEAN_S = 100e-9
CLUSTER_POWER_DECAY_S = 100e-9
SCATTERER_ANNULUS_M = (1.0, 50.0)

_MIN_USER_ELEMENT_DISTANCE_M = 1e-6


@dataclass(frozen=True)
class UserTrajectory:
    """Initial polar position plus constant-velocity motion over P+1 frames."""

    initial_angle_rad: float
    initial_distance_m: float
    velocity_mps: np.ndarray  # shape (2,)
    frame_positions: np.ndarray  # shape (P+1, 2), one per radio frame


def make_trajectory(
    angle_rad: float, distance_m: float, velocity_mps: np.ndarray, num_frames: int
) -> UserTrajectory:
    """Positions advance by velocity * 10 ms per frame from the polar start."""
    start = np.array(
        [distance_m * np.sin(angle_rad), distance_m * np.cos(angle_rad)]
    )
    velocity_mps = np.asarray(velocity_mps, dtype=float)
    steps = np.arange(num_frames)[:, None] * FRAME_DURATION_S
    positions = start[None, :] + steps * velocity_mps[None, :]
    return UserTrajectory(angle_rad, distance_m, velocity_mps, positions)


@dataclass(frozen=True)
class ClusterSet:
    """NLoS taps: complex gains, delays, scatterer geometry, Doppler rates."""

    gains: np.ndarray  # (n_paths,) complex, sum of mean powers = 1
    delays_s: np.ndarray  # (n_paths,)
    scatterer_positions: np.ndarray  # (n_paths, 2)
    doppler_rates: np.ndarray  # (n_paths,) rad/s
    los_delay_s: float


@dataclass(frozen=True)
class ChannelFrame:
    """Frequency-domain channel H (K x N_BS) for one radio frame."""

    H: np.ndarray
    frame_index: int
    trajectory: UserTrajectory


def element_positions(cfg: SystemConfig) -> np.ndarray:
    """ULA element coordinates, shape (N_BS, 2), centered on the origin."""
    d = cfg.antenna_spacing_wavelengths * cfg.wavelength_m
    n = cfg.num_bs_antennas
    x = (np.arange(n) - (n - 1) / 2.0) * d
    return np.stack([x, np.zeros(n)], axis=1)


def generate_clusters(
    cfg: SystemConfig, trajectory: UserTrajectory, rng: np.random.Generator
) -> ClusterSet:
    """Draw NLoS taps with an exponential power-delay profile.

    Cluster delays are Exp(100 ns); cluster mean powers decay exponentially
    in delay and the per-path mean powers are normalized so their sum is 1
    before Rician weighting. Scatterers are uniform in an annulus around the
    user's initial position and persist for the whole frame sequence.
    """
    user0 = trajectory.frame_positions[0]
    n_paths = cfg.num_clusters * cfg.rays_per_cluster
    los_delay = float(np.linalg.norm(user0)) / SPEED_OF_LIGHT
    if n_paths == 0:
        empty = np.zeros(0)
        return ClusterSet(
            gains=empty.astype(complex),
            delays_s=empty,
            scatterer_positions=np.zeros((0, 2)),
            doppler_rates=empty,
            los_delay_s=los_delay,
        )

    cluster_delays = rng.exponential(CLUSTER_DELAY_MEAN_S, cfg.num_clusters)
    cluster_powers = np.exp(-cluster_delays / CLUSTER_POWER_DECAY_S)
    path_powers = np.repeat(cluster_powers / cfg.rays_per_cluster, cfg.rays_per_cluster)
    path_powers = path_powers / path_powers.sum()
    delays = np.repeat(cluster_delays, cfg.rays_per_cluster)

    radius = rng.uniform(*SCATTERER_ANNULUS_M, n_paths)
    azimuth = rng.uniform(0.0, 2.0 * np.pi, n_paths)
    scatterers = user0[None, :] + radius[:, None] * np.stack(
        [np.cos(azimuth), np.sin(azimuth)], axis=1
    )

    gains = np.sqrt(path_powers / 2.0) * (
        rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)
    )

    # Doppler from the arrival direction (user toward scatterer) and velocity.
    towards = scatterers - user0[None, :]
    towards /= np.linalg.norm(towards, axis=1, keepdims=True)
    rates = 2.0 * np.pi * (towards @ trajectory.velocity_mps) / cfg.wavelength_m

    return ClusterSet(gains, delays, scatterers, rates, los_delay)


def _spherical_phases(points: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """exp(-j 2 pi d / lambda) from every element to every point; (n_pts, N_BS)."""
    elements = element_positions(cfg)
    diff = points[:, None, :] - elements[None, :, :]
    dists = np.linalg.norm(diff, axis=2)
    if dists.size and dists.min() < _MIN_USER_ELEMENT_DISTANCE_M:
        raise DegenerateInputError("point collocated with an array element")
    return np.exp(-2j * np.pi * dists / cfg.wavelength_m)


def los_phase_vector(
    user_pos: np.ndarray,
    velocity_mps: np.ndarray,
    cfg: SystemConfig,
    time_s: float,
) -> np.ndarray:
    """Unit-modulus LoS response with exact per-element spherical phases.

    Entry s is exp(-j 2 pi dist(element_s, user) / lambda) times the Doppler
    rotation exp(j 2 pi (r_hat . v / lambda) t), r_hat pointing from the user
    toward the array center.
    """
    user_pos = np.asarray(user_pos, dtype=float)
    phases = _spherical_phases(user_pos[None, :], cfg)[0]
    range_m = np.linalg.norm(user_pos)
    if range_m < _MIN_USER_ELEMENT_DISTANCE_M:
        raise DegenerateInputError("user collocated with the array center")
    r_hat = -user_pos / range_m
    doppler = np.dot(r_hat, np.asarray(velocity_mps, dtype=float)) / cfg.wavelength_m
    return phases * np.exp(2j * np.pi * doppler * time_s)


def frequency_domain_channel(
    clusters: ClusterSet, los: np.ndarray, cfg: SystemConfig, k: int
) -> np.ndarray:
    """Rician combination of NLoS taps and the LoS term on subcarrier k."""
    if not 0 <= k < cfg.num_subcarriers:
        raise DimensionError(f"subcarrier index {k} out of range")
    return _channel_all_subcarriers(clusters, los, cfg)[k]


def _channel_all_subcarriers(
    clusters: ClusterSet, los: np.ndarray, cfg: SystemConfig
) -> np.ndarray:
    """Vectorized form of frequency_domain_channel over k; (K, N_BS)."""
    k_r = 10.0 ** (cfg.rician_k_db / 10.0)
    f_k = cfg.carrier_freq_hz + np.arange(cfg.num_subcarriers) * cfg.subcarrier_spacing_hz
    los_part = np.sqrt(k_r / (k_r + 1.0)) * np.exp(
        -2j * np.pi * f_k * clusters.los_delay_s
    )[:, None] * los[None, :]
    if clusters.gains.size == 0:
        return los_part
    steering = _spherical_phases(clusters.scatterer_positions, cfg)  # (paths, N_BS)
    rotations = np.exp(-2j * np.pi * np.outer(f_k, clusters.delays_s))  # (K, paths)
    nlos_part = np.sqrt(1.0 / (k_r + 1.0)) * (rotations * clusters.gains[None, :]) @ steering
    return los_part + nlos_part


def pathloss_db(distance_m: float, cfg: SystemConfig) -> float:
    """Free-space-style link budget: 32.4 + 20 log10(f_GHz) + 20 log10(d_m)."""
    if distance_m <= 0:
        raise DegenerateInputError("pathloss requires positive distance")
    f_ghz = cfg.carrier_freq_hz / 1e9
    return 32.4 + 20.0 * np.log10(f_ghz) + 20.0 * np.log10(distance_m)


def generate_frame_sequence(
    cfg: SystemConfig, trajectory: UserTrajectory, rng: np.random.Generator
) -> list[ChannelFrame]:
    """P+1 quasi-static frames, 10 ms apart.

    Cluster gains persist across frames with Doppler phase evolution; LoS
    geometry and delays are re-derived from the frame position; the whole
    frame is scaled by the link-budget amplitude at the current range.
    """
    clusters = generate_clusters(cfg, trajectory, rng)
    frames = []
    for p, pos in enumerate(trajectory.frame_positions):
        t = p * FRAME_DURATION_S
        los = los_phase_vector(pos, trajectory.velocity_mps, cfg, t)
        evolved = dataclasses.replace(
            clusters,
            gains=clusters.gains * np.exp(1j * clusters.doppler_rates * t),
            los_delay_s=float(np.linalg.norm(pos)) / SPEED_OF_LIGHT,
        )
        h = _channel_all_subcarriers(evolved, los, cfg)
        h = h * 10.0 ** (-pathloss_db(float(np.linalg.norm(pos)), cfg) / 20.0)
        frames.append(ChannelFrame(H=h, frame_index=p, trajectory=trajectory))
    return frames
