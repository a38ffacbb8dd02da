"""Uplink pilot transmission and the pilot-matched observation tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, complex_normal
from .config import ConfigError, Streams, SystemConfig


def pilot_matrix(config: SystemConfig) -> np.ndarray:
    """K x tau pilot matrix: first K rows of the unitary tau-point DFT.

    Rows have unit norm and are pairwise orthogonal; pilot k is assigned to
    user k (with orthogonal pilots the assignment is immaterial).
    """
    tau, k = config.pilot_len, config.num_users
    if tau < k:
        raise ConfigError(f"pilot_len {tau} < num_users {k}")
    n = np.arange(tau)
    return np.exp(-2j * np.pi * np.outer(np.arange(k), n) / tau) / np.sqrt(tau)


@dataclass(frozen=True)
class PilotObservation:
    """Pilot-matched, per-snapshot observations Ybar_mk = sqrt(rho) h_mk + noise."""

    ybar: np.ndarray        # (M, K, N, T)
    pilot_power: float
    noise_var: float


def observe_pilots(realization: ChannelRealization, config: SystemConfig,
                   streams: Streams) -> PilotObservation:
    """Synthesize Ybar directly from the collapsed model.

    Multiplying the raw N x tau receive block by p_k^H with unit-norm
    orthogonal pilots leaves sqrt(rho) h_mk plus white noise of the original
    per-entry variance, so the tau-long waveform never needs to be formed.
    """
    noise = complex_normal(streams.noise, realization.channel.shape,
                           config.noise_var)
    ybar = np.sqrt(config.pilot_power) * realization.channel + noise
    return PilotObservation(ybar=ybar, pilot_power=config.pilot_power,
                            noise_var=config.noise_var)


def observe_pilots_raw(realization: ChannelRealization, config: SystemConfig,
                       streams: Streams) -> np.ndarray:
    """Full tau-long receive waveform per AP and snapshot: (M, N, T, tau).

    Y_m(t) = sqrt(rho) * sum_k h_mk(t) p_k + N_m(t). Kept out of the hot path;
    exists so tests can check pilot-matched reduction and cross-pilot leakage
    end to end.
    """
    pilots = pilot_matrix(config)                       # (K, tau)
    h = realization.channel                             # (M, K, N, T)
    signal = np.einsum("mknt,ks->mnts", h, pilots)
    noise = complex_normal(streams.noise, signal.shape, config.noise_var)
    return np.sqrt(config.pilot_power) * signal + noise


def match_pilot(y_raw: np.ndarray, pilots: np.ndarray, k: int) -> np.ndarray:
    """Correlate raw (M, N, T, tau) blocks with pilot k: returns (M, N, T)."""
    return y_raw @ pilots[k].conj()
