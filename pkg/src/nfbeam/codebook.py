"""Far-field DFT, near-field angle-distance, and widebeam probing codebooks,
plus the per-subcarrier digital precoder schedule.

Conventions: the channel row h (1 x N_BS) multiplies a codeword column b
(N_BS x 1) with no conjugation, matching the beam-training gain |h b|. All
codewords have entries of modulus 1/sqrt(N_BS), hence exactly unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import element_positions
from .config import SystemConfig
from .errors import DegenerateInputError, DimensionError


@dataclass(frozen=True)
class Codebook:
    """Codeword matrix (N_BS x size) with per-codeword (angle, distance) meta.

    distances_m is None for angle-only codebooks (DFT, widebeam). The
    near-field layout is distance-major: index n = distance_idx * N_BS +
    angle_idx.
    """

    codewords: np.ndarray
    angles_rad: np.ndarray
    distances_m: np.ndarray | None
    kind: str

    @property
    def size(self) -> int:
        return self.codewords.shape[1]


@dataclass(frozen=True)
class DigitalSchedule:
    """Unitary DFT base matrix Q and the per-subcarrier column sets I_k."""

    base_matrix: np.ndarray  # (N_RF, N_RF)
    column_sets: np.ndarray  # (K, N_RF) int, 0-based permutations

    def precoder_for_subcarrier(self, k: int) -> np.ndarray:
        return self.base_matrix[:, self.column_sets[k]]


def _sin_angle_grid(n: int) -> np.ndarray:
    """Uniform grid of sin(psi) over [-1, 1), n points."""
    return -1.0 + 2.0 * np.arange(n) / n


def dft_codebook(cfg: SystemConfig) -> Codebook:
    """N_BS orthogonal far-field codewords on the uniform sin-angle grid."""
    x = element_positions(cfg)[:, 0]
    sin_grid = _sin_angle_grid(cfg.num_bs_antennas)
    phases = -2.0 * np.pi / cfg.wavelength_m * np.outer(x, sin_grid)
    codewords = np.exp(1j * phases) / np.sqrt(cfg.num_bs_antennas)
    return Codebook(codewords, np.arcsin(sin_grid), None, "dft")


def near_field_codeword(psi: float, r: float, cfg: SystemConfig) -> np.ndarray:
    """Steering vector focused at polar point (psi, r).

    Entry s is exp(j 2 pi (r_s - r) / lambda) / sqrt(N_BS) with r_s the exact
    element-to-focal-point distance, the conjugate of the spherical LoS phase
    up to a global rotation.
    """
    if r <= 0:
        raise DegenerateInputError("focal distance must be positive")
    elements = element_positions(cfg)
    focal = np.array([r * np.sin(psi), r * np.cos(psi)])
    dists = np.linalg.norm(focal[None, :] - elements, axis=1)
    return np.exp(2j * np.pi * (dists - r) / cfg.wavelength_m) / np.sqrt(
        cfg.num_bs_antennas
    )


def near_field_codebook(cfg: SystemConfig) -> Codebook:
    """All N_BS angles x M distances, distance-major column layout."""
    sin_grid = _sin_angle_grid(cfg.num_bs_antennas)
    angles = np.arcsin(sin_grid)
    distances = np.linspace(*cfg.distance_range_m, cfg.distance_samples)
    columns = []
    for r in distances:
        for psi in angles:
            columns.append(near_field_codeword(psi, r, cfg))
    codewords = np.stack(columns, axis=1)
    meta_angles = np.tile(angles, cfg.distance_samples)
    meta_dists = np.repeat(distances, cfg.num_bs_antennas)
    return Codebook(codewords, meta_angles, meta_dists, "near_field")


def widebeam_codebook(cfg: SystemConfig) -> Codebook:
    """G probing beams, each the phase of the average of v adjacent DFT beams.

    Constant modulus by construction: entries are exp(j angle(mean))/sqrt(N).
    A zero-magnitude mean element gets phase 0 (np.angle(0) == 0).
    """
    dft = dft_codebook(cfg)
    v = cfg.widebeam_group_factor
    n = cfg.num_bs_antennas
    groups = dft.codewords.reshape(n, cfg.widebeam_count, v)
    means = groups.mean(axis=2)
    codewords = np.exp(1j * np.angle(means)) / np.sqrt(n)
    angles = dft.angles_rad.reshape(cfg.widebeam_count, v).mean(axis=1)
    return Codebook(codewords, angles, None, "widebeam")


def analog_precoder_for_symbol(
    t: int, widebeams: Codebook, cfg: SystemConfig
) -> np.ndarray:
    """Widebeam columns (t-1)*N_RF .. t*N_RF for pilot symbol t (1-based)."""
    if not 1 <= t <= cfg.pilot_symbols:
        raise DimensionError(
            f"pilot symbol {t} out of range 1..{cfg.pilot_symbols}"
        )
    lo = (t - 1) * cfg.num_rf_chains
    return widebeams.codewords[:, lo : lo + cfg.num_rf_chains]


def digital_schedule(cfg: SystemConfig) -> DigitalSchedule:
    """Cyclic-shift column schedule over a unitary N_RF-point DFT.

    Subcarrier k (0-based) uses columns (j + k) mod N_RF, j = 0..N_RF-1,
    i.e. each subcarrier probes a shifted permutation of the DFT basis.
    The "identity" scheme (simplified-pilot ablation) uses F_BB = I for
    every subcarrier.
    """
    n_rf = cfg.num_rf_chains
    k_axis = np.arange(cfg.num_subcarriers)
    if cfg.digital_scheme == "identity":
        base = np.eye(n_rf, dtype=complex)
        sets = np.tile(np.arange(n_rf), (cfg.num_subcarriers, 1))
        return DigitalSchedule(base, sets)
    idx = np.arange(n_rf)
    base = np.exp(-2j * np.pi * np.outer(idx, idx) / n_rf) / np.sqrt(n_rf)
    sets = (idx[None, :] + k_axis[:, None]) % n_rf
    return DigitalSchedule(base, sets)
