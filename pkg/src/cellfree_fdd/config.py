"""Scenario configuration and deterministic random-number streams.

Every randomized stage of the simulator (placement, shadowing, small-scale
fading, receiver noise, reciprocity perturbations) pulls from its own seeded
stream derived from a single root seed, so re-running with the same seed is
bit-reproducible and toggling one randomness source never perturbs another.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

# Stream identifiers used to fan the root seed out into independent
# per-purpose generators (order is part of the reproducibility contract).
_STREAM_DOMAINS = {
    "layout": 0,
    "shadowing": 1,
    "angles": 2,
    "small_scale": 3,
    "noise": 4,
    "reciprocity": 5,
    "small_scale_dl": 6,
    "payload": 7,
    "trial": 8,
}


class ConfigError(ValueError):
    """Raised when a SystemConfig violates one of its invariants."""


@dataclass(frozen=True)
class SystemConfig:
    """All scenario parameters for one simulation setup.

    Power quantities are linear watts, distances kilometers, angles radians.
    ``snapshots`` is the number of pilot-matched observation columns T
    collected per angle-coherence interval.
    """

    num_aps: int = 10             # M
    antennas_per_ap: int = 32     # N
    num_users: int = 20           # K
    num_paths: int = 3            # L
    pilot_len: int = 20           # tau (samples), >= K
    angle_coherence: int = 200    # tau_c (samples)
    snapshots: int = 16           # T
    pilot_power: float = 0.2      # rho, W
    ul_power: float = 0.2         # rho_u, W
    dl_power: float = 1.0         # rho_d, W
    noise_var: float = 1e-13      # sigma_n^2, W
    bandwidth: float = 100e6      # B, Hz
    grid_size: int = 100          # rotation search grid points
    antenna_spacing_ratio: float = 0.5   # u/lambda
    recip_var_upsilon: float = 0.0       # sigma_ups^2 (spatial-freq reciprocity error)
    recip_var_beta: float = 0.0          # sigma_beta^2 (large-scale reciprocity error)
    amp_efficiency: float = 0.2          # vartheta
    power_tc: float = 0.2                # P_tc, W per antenna
    power_fixed_bh: float = 0.825        # P_0, W per backhaul
    power_bt: float = 0.25e-9            # P_bt, W per bit/s
    uc_threshold: float = 95.0           # delta, percent of channel power
    square_side: float = 1.0             # D, km
    shadow_std_db: float = 8.0           # sigma_z, dB
    rng_seed: int = 1                    # root seed

    def __post_init__(self):
        self.validate()

    @property
    def eta(self) -> float:
        """Phase progression per antenna: eta = 2*pi*u/lambda."""
        return 2.0 * np.pi * self.antenna_spacing_ratio

    @property
    def prelog(self) -> float:
        """Training overhead prelog kappa = 1 - tau/tau_c."""
        return 1.0 - self.pilot_len / self.angle_coherence

    def validate(self) -> None:
        c = self
        ints = dict(num_aps=c.num_aps, antennas_per_ap=c.antennas_per_ap,
                    num_users=c.num_users, num_paths=c.num_paths,
                    pilot_len=c.pilot_len, angle_coherence=c.angle_coherence,
                    snapshots=c.snapshots, grid_size=c.grid_size)
        for name, v in ints.items():
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if c.pilot_len < c.num_users:
            raise ConfigError(
                f"pilot_len {c.pilot_len} < num_users {c.num_users}: "
                "orthogonal pilots need tau >= K")
        if c.pilot_len >= c.angle_coherence:
            raise ConfigError("pilot_len must be smaller than angle_coherence")
        pos = dict(pilot_power=c.pilot_power, ul_power=c.ul_power,
                   dl_power=c.dl_power, noise_var=c.noise_var,
                   bandwidth=c.bandwidth, square_side=c.square_side,
                   antenna_spacing_ratio=c.antenna_spacing_ratio)
        for name, v in pos.items():
            if not v > 0:
                raise ConfigError(f"{name} must be strictly positive, got {v!r}")
        if c.recip_var_upsilon < 0 or c.recip_var_beta < 0:
            raise ConfigError("reciprocity variances must be nonnegative")
        if not 0 < c.uc_threshold <= 100:
            raise ConfigError("uc_threshold must be in (0, 100]")
        if not 0 < c.amp_efficiency <= 1:
            raise ConfigError("amp_efficiency must be in (0, 1]")
        if c.shadow_std_db < 0:
            raise ConfigError("shadow_std_db must be nonnegative")

    def supports_zero_forcing(self) -> bool:
        """K*L <= N is required for the zero-forcing Gram inverse."""
        return self.num_users * self.num_paths <= self.antennas_per_ap

    def with_overrides(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_file(cls, path) -> "SystemConfig":
        """Load a config from a JSON file whose keys mirror the field names."""
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def stream(seed: int, domain: str, *key: int) -> np.random.Generator:
    """Independent generator for `domain` (optionally sub-keyed, e.g. by trial).

    Same (seed, domain, key) always yields the same stream; distinct domains
    or keys are statistically independent.
    """
    dom = _STREAM_DOMAINS[domain]
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(dom, *key))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class Streams:
    """Per-purpose generators for one Monte-Carlo trial."""

    layout: np.random.Generator = field(repr=False)
    shadowing: np.random.Generator = field(repr=False)
    angles: np.random.Generator = field(repr=False)
    small_scale: np.random.Generator = field(repr=False)
    noise: np.random.Generator = field(repr=False)
    reciprocity: np.random.Generator = field(repr=False)
    small_scale_dl: np.random.Generator = field(repr=False)
    payload: np.random.Generator = field(repr=False)

    @classmethod
    def for_trial(cls, config: SystemConfig, trial: int = 0) -> "Streams":
        from dataclasses import fields as dc_fields

        seed = config.rng_seed
        return cls(**{f.name: stream(seed, f.name, trial)
                      for f in dc_fields(cls)})


def noise_var_for_snr(snr_db: float, tx_power: float, beta_ref: float = 1.0,
                      n_antennas: int = 1) -> float:
    """Noise variance realizing a target per-receive-antenna SNR.

    The received signal power per antenna is tx_power * beta_ref / N for
    unit-norm steering, so sigma_n^2 = tx_power * beta_ref / (N * 10^(snr/10)).
    """
    return tx_power * beta_ref / (n_antennas * 10.0 ** (snr_db / 10.0))


# Reference large-scale gain anchoring system-level SNR sweeps (the gain at
# which "SNR = x dB" holds; roughly the shadow-free LOS path loss at 66 m).
# Chosen so that at 10 dB the default network is interference-dominated.
REF_GAIN_DB = -107.0


def reference_beta() -> float:
    return float(10.0 ** (REF_GAIN_DB / 10.0))


def system_noise_var(snr_db: float, tx_power: float) -> float:
    """Noise variance for a system-level SNR sweep (anchored at reference_beta)."""
    return tx_power * reference_beta() / 10.0 ** (snr_db / 10.0)
