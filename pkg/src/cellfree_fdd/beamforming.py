"""Angle-based precoders and combiners (A-MF, A-ZF, A-MMSE).

All schemes are built from estimated path angles and large-scale gains only.
Each AP constructs an N x L block per user; the transmit/receive vector is a
weighted combination of the block columns:

    downlink  w_mk = (G_mk / ||G_mk||_F) @ gamma_mk
    uplink    v_mk = C_mk @ gamma_mk

with per-AP downlink power constraint sum_k ||G gamma||^2 / ||G||_F^2 <= 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .estimation import MultipathEstimate, estimation_uncertainty

SCHEMES = ("a-mf", "a-zf", "a-mmse")

#: Gram condition number beyond which the zero-forcing inverse is diagonally
#: loaded and the result flagged.
ZF_COND_LIMIT = 1e12
ZF_LOADING = 1e-10


def sigma_tilde(estimate: MultipathEstimate, config: SystemConfig,
                direction: str) -> tuple[np.ndarray, np.ndarray]:
    """Effective (spatial-freq, large-scale) uncertainty variances per (m, k).

    Downlink folds the reciprocity-error variances on top of the estimation
    MSEs; uplink carries the estimation MSEs alone. Exact-component feeds
    contribute no estimation term.
    """
    if getattr(estimate, "exact", False):
        mse_u = np.zeros(estimate.noise_var.shape)
        mse_b = np.zeros(estimate.noise_var.shape)
    else:
        mse_u, mse_b = estimation_uncertainty(estimate, config)
    if direction == "dl":
        return (config.recip_var_upsilon + mse_u,
                config.recip_var_beta + mse_b)
    if direction == "ul":
        return mse_u, mse_b
    raise ValueError(f"direction must be 'dl' or 'ul', got {direction!r}")


def precoder_amf(steering_mk: np.ndarray, beta_mk: np.ndarray) -> np.ndarray:
    """Matched block G = A_hat @ diag(sqrt(beta_hat)): column l = sqrt(b_l) a_l."""
    return steering_mk * np.sqrt(beta_mk)[None, :]


def precoder_azf(steering_m: np.ndarray, beta_m: np.ndarray):
    """Zero-forcing blocks for one AP: G_m = M (M^H M)^{-1}, M = A_m B_m.

    ``steering_m`` is (K, N, L), ``beta_m`` (K, L); returns ((K, N, L) blocks,
    ill_conditioned flag). Paths with zero estimated gain are excluded from
    the stack (they carry no signal and need no nulling); the surviving
    column count must stay within N for an invertible Gram matrix, beyond
    that (or near rank deficiency) the Gram is diagonally loaded and the
    result flagged.
    """
    k, n, el = steering_m.shape
    cols = (steering_m * np.sqrt(beta_m)[:, None, :]) \
        .transpose(1, 0, 2).reshape(n, k * el)
    alive = np.flatnonzero(beta_m.reshape(-1) > 0)
    blocks = np.zeros((n, k * el), dtype=complex)
    ill = False
    if alive.size:
        stacked = cols[:, alive]
        gram = stacked.conj().T @ stacked
        ill = alive.size > n or np.linalg.cond(gram) > ZF_COND_LIMIT
        if ill:
            gram = gram + (ZF_LOADING * np.trace(gram).real / alive.size) \
                * np.eye(alive.size)
        blocks[:, alive] = stacked @ np.linalg.inv(gram)
    return blocks.reshape(n, k, el).transpose(1, 0, 2), bool(ill)


def precoder_ammse(steering_m: np.ndarray, beta_m: np.ndarray,
                   noise_var: float, sig_ups2_m: np.ndarray,
                   sig_beta2_m: np.ndarray) -> np.ndarray:
    """Robust MMSE blocks for one AP.

    Inverts sum_k (A B B^H A^H + Upsilon_k) + sigma_n^2 I once and applies it
    to every A_k B_k. Upsilon_k injects the angle / large-scale uncertainty
    through the antenna-index weighting E = diag(0..N-1):

        Upsilon_k = su2 (E A B)(E A B)^H + su2 sb2 (E A)(E A)^H + sb2 A A^H.
    """
    k, n, el = steering_m.shape
    e = np.arange(n)[:, None]
    cov = noise_var * np.eye(n, dtype=complex)
    ab_all = steering_m * np.sqrt(beta_m)[:, None, :]
    for j in range(k):
        ab = ab_all[j]
        ea = e * steering_m[j]
        eab = e * ab
        cov = cov + ab @ ab.conj().T \
            + sig_ups2_m[j] * (eab @ eab.conj().T) \
            + sig_ups2_m[j] * sig_beta2_m[j] * (ea @ ea.conj().T) \
            + sig_beta2_m[j] * (steering_m[j] @ steering_m[j].conj().T)
    rhs = ab_all.transpose(1, 0, 2).reshape(n, k * el)
    sol = np.linalg.solve(cov, rhs)
    return sol.reshape(n, k, el).transpose(1, 0, 2)


def uniform_gamma(config_or_paths, mode: str) -> np.ndarray:
    """Per-user uniform path weights: unit-norm 1/sqrt(L) downlink, 1/L uplink."""
    el = getattr(config_or_paths, "num_paths", config_or_paths)
    if mode == "dl":
        return np.full(el, 1.0 / np.sqrt(el))
    return np.full(el, 1.0 / el)


def equal_power_gamma(blocks: np.ndarray,
                      mask: np.ndarray | None = None) -> np.ndarray:
    """Uniform-direction weights drawing equal per-user shares of AP power.

    Each AP splits its downlink budget evenly over the users it serves, so
    the per-AP constraint holds with equality (full budget use); masked or
    zero blocks get zero weights.
    """
    m_ap, k_users, _, el = blocks.shape
    if mask is None:
        mask = np.ones((m_ap, k_users), dtype=bool)
    u = np.ones(el) / np.sqrt(el)
    bu_norm2 = (np.abs(np.einsum("mknl,l->mkn", blocks, u)) ** 2).sum(-1)
    blk_norm2 = (np.abs(blocks) ** 2).sum(axis=(-2, -1))
    served = mask.sum(axis=1)
    share = np.where(mask, 1.0 / np.maximum(served, 1)[:, None], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.sqrt(share * blk_norm2 / bu_norm2)
    scale = np.where(np.isfinite(scale), scale, 0.0)
    return scale[..., None] * u


def assemble(blocks: np.ndarray, gamma: np.ndarray, mode: str,
             normalize: bool = True):
    """Combine block columns into per-(m, k) vectors.

    ``blocks`` is (..., N, L) and ``gamma`` (..., L). Blocks are normalized
    by their Frobenius norm before weighting (for the uplink this is a unit
    convention: each user's own SINR is invariant to its combiner scale, and
    equalizing block norms keeps the cross terms of the rate expressions
    comparable across users). A zero block yields a zero vector, flagged.
    """
    if mode not in ("dl", "ul"):
        raise ValueError(f"mode must be 'dl' or 'ul', got {mode!r}")
    norms = np.sqrt((np.abs(blocks) ** 2).sum(axis=(-2, -1)))
    zero = norms == 0
    if normalize:
        scale = np.where(zero, 1.0, norms)
        vec = np.einsum("...nl,...l->...n", blocks, gamma) / scale[..., None]
    else:
        vec = np.einsum("...nl,...l->...n", blocks, gamma)
    vec = np.where(zero[..., None], 0.0, vec)
    return vec, zero


@dataclass(frozen=True)
class BeamformerSet:
    """Per-(m, k) blocks, weights, and assembled vectors for one scheme."""

    scheme: str
    mode: str                  # "dl" (precoding) or "ul" (combining)
    blocks: np.ndarray         # (M, K, N, L)
    gamma: np.ndarray          # (M, K, L)
    vectors: np.ndarray        # (M, K, N)
    ill_conditioned: bool = False

    def with_gamma(self, gamma: np.ndarray) -> "BeamformerSet":
        vec, _ = assemble(self.blocks, gamma, self.mode)
        return BeamformerSet(self.scheme, self.mode, self.blocks,
                             np.asarray(gamma, dtype=complex), vec,
                             self.ill_conditioned)

    def relative_powers(self) -> np.ndarray:
        """(M, K) per-user share of each AP's power budget (DL constraint)."""
        num = (np.abs(np.einsum("mknl,mkl->mkn", self.blocks,
                                self.gamma)) ** 2).sum(axis=-1)
        den = (np.abs(self.blocks) ** 2).sum(axis=(-2, -1))
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def build_beamformers(estimate: MultipathEstimate, config: SystemConfig,
                      scheme: str, mode: str,
                      gamma: np.ndarray | None = None,
                      mask: np.ndarray | None = None) -> BeamformerSet:
    """Construct blocks for all APs and assemble vectors.

    ``gamma`` may be a (M, K, L) array or None for the defaults: downlink
    weights split each AP's power budget equally over the users it serves
    (the equal-power baseline, satisfying the per-AP constraint exactly);
    uplink weights are the flat 1/L of every path.
    """
    scheme = scheme.lower()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    m_ap, k_users, n, el = estimate.steering.shape
    blocks = np.empty((m_ap, k_users, n, el), dtype=complex)
    ill = False
    if scheme == "a-mmse":
        su2, sb2 = sigma_tilde(estimate, config, mode)
    for m in range(m_ap):
        if scheme == "a-mf":
            for k in range(k_users):
                blocks[m, k] = precoder_amf(estimate.steering[m, k],
                                            estimate.beta[m, k])
        elif scheme == "a-zf":
            blocks[m], flagged = precoder_azf(estimate.steering[m],
                                              estimate.beta[m])
            ill |= flagged
        else:
            blocks[m] = precoder_ammse(estimate.steering[m], estimate.beta[m],
                                       config.noise_var, su2[m], sb2[m])
    if gamma is None:
        if mode == "dl":
            gamma = equal_power_gamma(blocks, mask)
        else:
            gamma = np.broadcast_to(uniform_gamma(el, mode),
                                    (m_ap, k_users, el)).copy()
        if mask is not None:
            gamma = np.where(mask[..., None], gamma, 0.0)
    gamma = np.asarray(gamma, dtype=complex)
    vectors, _ = assemble(blocks, gamma, mode)
    return BeamformerSet(scheme=scheme, mode=mode, blocks=blocks, gamma=gamma,
                         vectors=vectors, ill_conditioned=ill)
