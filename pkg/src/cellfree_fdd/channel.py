"""Ground-truth multipath channel synthesis.

Each AP-user link (m, k) carries L propagation paths with angles phi (static
over the angle-coherence interval), large-scale gains beta (path loss times
per-path log-normal shadowing) and fast complex gains alpha(t) that are
redrawn every snapshot. The channel vector is

    h_mk(t) = sqrt(1/L) * A_mk @ diag(sqrt(beta_mk)) @ alpha_mk(t),

with A_mk the N x L matrix of unit-norm steering columns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import SystemConfig, Streams
from .geometry import Layout

# Path-loss model constants: intercepts for LOS/NLOS and the slope breakpoint.
PL_INTERCEPT_LOS_DB = -148.0
PL_INTERCEPT_NLOS_DB = -158.0
PL_BREAKPOINT_KM = 0.05

# Floor keeping large-scale gains strictly positive (B invertible for A-ZF).
BETA_FLOOR = 1e-12


def steering_vector(phi, n_antennas: int, eta: float) -> np.ndarray:
    """Unit-norm ULA steering vector(s); entry q is exp(j*q*eta*sin(phi))/sqrt(N).

    `phi` may be scalar or any array; the antenna axis is appended last.
    """
    ups = eta * np.sin(np.asarray(phi, dtype=float))
    return steering_from_spatial_freq(ups, n_antennas)


def steering_from_spatial_freq(upsilon, n_antennas: int) -> np.ndarray:
    ups = np.asarray(upsilon, dtype=float)
    q = np.arange(n_antennas)
    return np.exp(1j * ups[..., None] * q) / np.sqrt(n_antennas)


def path_loss_db(u_km, z_db, los) -> np.ndarray:
    """Large-scale gain in dB: path loss plus shadow fading draw z_db.

    Two-slope model with breakpoint u1 = 0.05 km; the intercept P follows the
    LOS flag while the slope branch follows distance. The branches are
    intentionally not stitched at u1 (the model is used verbatim).
    """
    u = np.asarray(u_km, dtype=float)
    if np.any(u <= 0):
        raise ValueError("distance must be strictly positive")
    z = np.asarray(z_db, dtype=float)
    p = np.where(los, PL_INTERCEPT_LOS_DB, PL_INTERCEPT_NLOS_DB)
    far = p - 37.6 * np.log10(u) + z - 15.0 * np.log10(PL_BREAKPOINT_KM)
    near = p - 35.0 * np.log10(u) + z
    return np.where(u > PL_BREAKPOINT_KM, far, near)


@dataclass(frozen=True)
class ChannelRealization:
    """Per-(m, k) multipath components plus the assembled channel tensor."""

    phi: np.ndarray       # (M, K, L) path angles, rad
    upsilon: np.ndarray   # (M, K, L) spatial frequencies eta*sin(phi), rad
    beta: np.ndarray      # (M, K, L) linear large-scale gains
    alpha: np.ndarray     # (M, K, L, T) small-scale gains, unit variance
    steering: np.ndarray  # (M, K, N, L) unit-norm steering columns A_mk
    channel: np.ndarray   # (M, K, N, T) channel vectors h_mk(t)

    @property
    def num_paths(self) -> int:
        return self.phi.shape[-1]

    def gain_diag(self, m: int, k: int) -> np.ndarray:
        """L x L diagonal matrix B_mk with entries sqrt(beta_l)."""
        return np.diag(np.sqrt(self.beta[m, k]))

    def rebuild_channel(self) -> np.ndarray:
        """Reassemble h from (A, B, alpha); equals `channel` by construction."""
        return assemble_channel(self.steering, self.beta, self.alpha)


def assemble_channel(steering: np.ndarray, beta: np.ndarray,
                     alpha: np.ndarray) -> np.ndarray:
    """h = sqrt(1/L) * A @ diag(sqrt(beta)) @ alpha for every (m, k, t)."""
    L = beta.shape[-1]
    weighted = np.sqrt(beta)[..., :, None] * alpha        # (M,K,L,T)
    return np.sqrt(1.0 / L) * (steering @ weighted)       # (M,K,N,T)


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws with the given variance."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channel(config: SystemConfig, layout: Layout,
                 streams: Streams) -> ChannelRealization:
    """Draw one uplink realization: angles and beta fixed across T snapshots,
    alpha i.i.d. per snapshot (path gains vary much faster than path angles)."""
    m, k, el, t = (config.num_aps, config.num_users, config.num_paths,
                   config.snapshots)
    phi = streams.angles.uniform(0.0, 2.0 * np.pi, size=(m, k, el))
    ups = config.eta * np.sin(phi)

    dist = layout.distances()                              # (M,K)
    los = dist <= PL_BREAKPOINT_KM
    z = streams.shadowing.normal(0.0, config.shadow_std_db, size=(m, k, el))
    gain_db = path_loss_db(dist[..., None], z, los[..., None])
    beta = np.maximum(10.0 ** (gain_db / 10.0), BETA_FLOOR)

    alpha = complex_normal(streams.small_scale, (m, k, el, t))
    steering = np.moveaxis(
        steering_from_spatial_freq(ups, config.antennas_per_ap), -1, -2)
    return ChannelRealization(phi=phi, upsilon=ups, beta=beta, alpha=alpha,
                              steering=steering,
                              channel=assemble_channel(steering, beta, alpha))


def dump_realization(realization: ChannelRealization, out_dir) -> list:
    """Write one CSV per tensor for cross-implementation oracle checks.

    Rows are emitted in column-major order of the index tuple; the header
    names the indices and the value columns (complex tensors split into
    re/im). Returns the written paths.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    tensors = {
        "phi": (realization.phi, ("m", "k", "l")),
        "upsilon": (realization.upsilon, ("m", "k", "l")),
        "beta": (realization.beta, ("m", "k", "l")),
        "alpha": (realization.alpha, ("m", "k", "l", "t")),
        "steering": (realization.steering, ("m", "k", "n", "l")),
        "channel": (realization.channel, ("m", "k", "n", "t")),
    }
    paths = []
    for name, (tensor, axes) in tensors.items():
        path = os.path.join(out_dir, f"{name}.csv")
        complex_valued = np.iscomplexobj(tensor)
        cols = list(axes) + (["re", "im"] if complex_valued else ["value"])
        index_grid = np.indices(tensor.shape)
        order = np.argsort(
            np.ravel_multi_index(index_grid.reshape(tensor.ndim, -1),
                                 tensor.shape, order="F"), kind="stable")
        flat_idx = index_grid.reshape(tensor.ndim, -1)[:, order]
        flat_val = tensor.reshape(-1)[order]
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for j in range(flat_val.size):
                idx = ",".join(str(int(v)) for v in flat_idx[:, j])
                v = flat_val[j]
                if complex_valued:
                    fh.write(f"{idx},{v.real:.17g},{v.imag:.17g}\n")
                else:
                    fh.write(f"{idx},{float(v):.17g}\n")
        paths.append(path)
    return paths


def apply_reciprocity(realization: ChannelRealization, config: SystemConfig,
                      streams: Streams) -> ChannelRealization:
    """Derive the downlink realization from the uplink one.

    Angles and large-scale gains carry over up to zero-mean Gaussian
    perturbations of variance sigma_ups^2 / sigma_beta^2 (non-ideal angle
    reciprocity); small-scale gains are redrawn because the downlink sits on
    a different carrier frequency.
    """
    shape = realization.upsilon.shape
    rng = streams.reciprocity
    d_ups = rng.normal(0.0, np.sqrt(config.recip_var_upsilon), size=shape) \
        if config.recip_var_upsilon > 0 else 0.0
    d_beta = rng.normal(0.0, np.sqrt(config.recip_var_beta), size=shape) \
        if config.recip_var_beta > 0 else 0.0

    ups_dl = realization.upsilon + d_ups
    beta_dl = np.maximum(realization.beta + d_beta, BETA_FLOOR)
    # Re-derive angles on the branch (front/back half-plane) of the uplink
    # angle so that zero perturbation reproduces phi exactly.
    folded = np.arcsin(np.clip(ups_dl / config.eta, -1.0, 1.0))
    phi_dl = np.where(np.cos(realization.phi) >= 0,
                      np.mod(folded, 2.0 * np.pi), np.pi - folded)
    alpha_dl = complex_normal(streams.small_scale_dl, realization.alpha.shape)
    steering_dl = np.moveaxis(
        steering_from_spatial_freq(ups_dl, config.antennas_per_ap), -1, -2)
    return replace(realization, phi=phi_dl, upsilon=ups_dl, beta=beta_dl,
                   alpha=alpha_dl, steering=steering_dl,
                   channel=assemble_channel(steering_dl, beta_dl, alpha_dl))
