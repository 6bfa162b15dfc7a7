"""ZC pilot generation and hybrid-precoded uplink pilot measurement.

One frame of sounding sweeps all G widebeams in T = G/N_RF OFDM symbols and
stacks the per-RF-chain outputs into Y (K x G), column g = (t-1)*N_RF + i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelFrame
from .codebook import Codebook, DigitalSchedule, analog_precoder_for_symbol
from .config import SystemConfig
from .errors import DimensionError

# Classic ZC parity: k(k+1) for odd length, k^2 for even length. This is the
# convention under which the nonzero-lag cyclic autocorrelation vanishes.
def _zc_eta(length: int) -> int:
    return 1 if length % 2 else 0


@dataclass(frozen=True)
class PilotMatrix:
    """Per-symbol pilot values X (K x T) and the ZC roots used per symbol."""

    X: np.ndarray
    roots: tuple[int, ...]


def zc_pilot(num_subcarriers: int, roots) -> PilotMatrix:
    """ZC pilots X[k, t] = exp(-j pi r_t k(k+eta) / K) / sqrt(K)."""
    k_len = num_subcarriers
    roots = tuple(int(r) for r in roots)
    for r in roots:
        if not 0 < r < k_len:
            raise DimensionError(f"ZC root {r} outside (0, {k_len})")
        if math.gcd(r, k_len) != 1:
            raise DimensionError(f"ZC root {r} not coprime with {k_len}")
    eta = _zc_eta(k_len)
    k = np.arange(k_len)
    cols = [np.exp(-1j * np.pi * r * k * (k + eta) / k_len) for r in roots]
    x = np.stack(cols, axis=1) / np.sqrt(k_len)
    return PilotMatrix(X=x, roots=roots)


def default_roots(num_subcarriers: int, count: int) -> tuple[int, ...]:
    """The `count` smallest integers >= 1 coprime with K, ascending."""
    roots = []
    candidate = 1
    while len(roots) < count:
        if math.gcd(candidate, num_subcarriers) == 1:
            roots.append(candidate)
        candidate += 1
    return tuple(roots)


def pilot_matrix(cfg: SystemConfig) -> PilotMatrix:
    """Per-config pilots: ZC by default, flat 1/sqrt(K) for the ablation."""
    t = cfg.pilot_symbols
    if cfg.pilot_scheme == "ones":
        x = np.full((cfg.num_subcarriers, t), 1.0 / np.sqrt(cfg.num_subcarriers), dtype=complex)
        return PilotMatrix(X=x, roots=())
    return zc_pilot(cfg.num_subcarriers, default_roots(cfg.num_subcarriers, t))


@dataclass(frozen=True)
class MeasurementFrame:
    """Stacked pilot measurements Y (K x G) for one radio frame."""

    Y: np.ndarray
    frame_index: int
    noise_power_dbm: float


def receive_pilot_symbol(
    h_k: np.ndarray,
    f_rf: np.ndarray,
    f_bb: np.ndarray,
    x: complex,
    ul_power_linear: float,
    noise_power_linear: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One received pilot vector y = sqrt(P) F_hyb^H h x + F_hyb^H n.

    Noise is drawn at the antennas as CN(0, sigma^2 I_NBS) and combined, so
    the post-combining covariance is sigma^2 F_hyb^H F_hyb, not white.
    """
    h_k = np.asarray(h_k)
    n_bs = h_k.shape[0]
    if f_rf.shape[0] != n_bs or f_rf.shape[1] != f_bb.shape[0]:
        raise DimensionError("precoder dimensions inconsistent with channel")
    f_hyb = f_rf @ f_bb
    signal = np.sqrt(ul_power_linear) * (f_hyb.conj().T @ h_k) * x
    sigma = np.sqrt(noise_power_linear / 2.0)
    noise = sigma * (rng.standard_normal(n_bs) + 1j * rng.standard_normal(n_bs))
    return signal + f_hyb.conj().T @ noise


def measure_frame(
    frame: ChannelFrame,
    pilots: PilotMatrix,
    widebeams: Codebook,
    schedule: DigitalSchedule,
    cfg: SystemConfig,
    rng: np.random.Generator,
) -> MeasurementFrame:
    """Sweep all widebeams and stack the responses into Y (K x G)."""
    k_count = cfg.num_subcarriers
    n_rf = cfg.num_rf_chains
    sqrt_p = np.sqrt(cfg.ul_power_linear)
    sigma = np.sqrt(cfg.noise_power_linear / 2.0)
    y = np.zeros((k_count, cfg.widebeam_count), dtype=complex)
    for t in range(1, cfg.pilot_symbols + 1):
        f_rf = analog_precoder_for_symbol(t, widebeams, cfg)
        responses = frame.H @ f_rf.conj()  # row k = F_RF^H h_k
        noise = sigma * (
            rng.standard_normal((k_count, cfg.num_bs_antennas))
            + 1j * rng.standard_normal((k_count, cfg.num_bs_antennas))
        )
        noise_proj = noise @ f_rf.conj()
        lo = (t - 1) * n_rf
        for k in range(k_count):
            f_bb = schedule.precoder_for_subcarrier(k)
            y[k, lo : lo + n_rf] = (
                sqrt_p * pilots.X[k, t - 1] * (f_bb.conj().T @ responses[k])
                + f_bb.conj().T @ noise_proj[k]
            )
    return MeasurementFrame(Y=y, frame_index=frame.frame_index, noise_power_dbm=cfg.noise_power_dbm)
