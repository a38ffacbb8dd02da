"""Max-min power/weight control, baselines, and user-centric AP selection.

The max-min problem is relaxed by replacing each rank-one weight outer
product gamma gamma^H with a Hermitian PSD matrix Gamma and solved by
bisection over the SINR target mu, each step deciding a convex feasibility
system (linear SINR and per-AP power constraints over the PSD blocks) with
the barrier kernel. The final weights come from the top eigenpair of each
Gamma, rescaled if the rank-one extraction nudges an AP past its budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .beamforming import (BeamformerSet, build_beamformers,
                          equal_power_gamma, sigma_tilde)
from .config import SystemConfig
from .estimation import MultipathEstimate
from .performance import closed_form_sinr, quadratic_terms
from . import sdp_kernel


def select_aps_uc(estimate: MultipathEstimate,
                  config: SystemConfig) -> np.ndarray:
    """User-centric mask: per user, the smallest AP prefix (by descending
    channel power ||A B||_F^2 = sum_l beta_l) holding >= delta% of the total."""
    power = estimate.beta.sum(axis=-1)           # (M, K)
    m_ap, k_users = power.shape
    mask = np.zeros((m_ap, k_users), dtype=bool)
    frac = config.uc_threshold / 100.0
    for k in range(k_users):
        order = np.argsort(-power[:, k], kind="stable")
        cum = np.cumsum(power[order, k])
        need = int(np.searchsorted(cum, frac * cum[-1] - 1e-15)) + 1
        mask[order[:need], k] = True
    return mask


def waterfill_dl(estimate: MultipathEstimate, config: SystemConfig,
                 mask: np.ndarray | None = None) -> np.ndarray:
    """Water-filling over users per AP, driven only by angle-domain channel
    power g_mk = ||A_mk B_mk||_F^2.

    Allocates rho_mk = max{level_m - sigma_n^2/g_mk, 0} with the water level
    set so the served powers sum to rho_tot = K_m * dl_power; users pushed to
    zero are removed and the level recomputed until all active powers are
    positive. Returns the (M, K) power matrix (watts).
    """
    g = estimate.beta.sum(axis=-1)
    m_ap, k_users = g.shape
    if mask is None:
        mask = np.ones((m_ap, k_users), dtype=bool)
    inv = config.noise_var / np.maximum(g, 1e-300)
    powers = np.zeros((m_ap, k_users))
    for m in range(m_ap):
        active = list(np.flatnonzero(mask[m]))
        if not active:
            continue
        rho_tot = len(active) * config.dl_power
        while active:
            level = (rho_tot + sum(inv[m, k] for k in active)) / len(active)
            p = {k: level - inv[m, k] for k in active}
            drop = [k for k in active if p[k] <= 0]
            if not drop:
                for k in active:
                    powers[m, k] = p[k]
                break
            active = [k for k in active if k not in drop]
    return powers


def gamma_from_shares(beams: BeamformerSet, shares: np.ndarray) -> np.ndarray:
    """Uniform-direction weights realizing the given per-(m, k) power shares."""
    _, _, _, el = beams.blocks.shape
    u = np.ones(el) / np.sqrt(el)
    bu_norm2 = (np.abs(np.einsum("mknl,l->mkn", beams.blocks, u)) ** 2).sum(-1)
    blk_norm2 = (np.abs(beams.blocks) ** 2).sum(axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.sqrt(shares * blk_norm2 / bu_norm2)
    scale = np.where(np.isfinite(scale), scale, 0.0)
    return scale[..., None] * u


@dataclass(frozen=True)
class SdpFeasibilityProblem:
    """Linear-over-PSD-blocks feasibility system for one SINR target mu."""

    mu: float
    coeffs: np.ndarray          # (m, B, L, L) Hermitian
    bounds: np.ndarray          # (m,)
    active_pairs: list          # block index -> (m, k)
    num_sinr: int               # leading constraints are the K SINR rows


def _link_matrices(estimate: MultipathEstimate, beams: BeamformerSet,
                   config: SystemConfig, direction: str):
    """Q_mkj = Xi^H Xi / L plus per-(m, k) power / noise coupling matrices."""
    el = estimate.beta.shape[-1]
    blocks = beams.blocks
    norms = np.sqrt((np.abs(blocks) ** 2).sum(axis=(-2, -1)))
    wcols = blocks / np.maximum(norms, 1e-300)[..., None, None]
    ab_conj = (estimate.steering * np.sqrt(estimate.beta)[:, :, None, :]).conj()
    xi = np.einsum("mknl,mjnp->mkjlp", ab_conj, wcols)      # (M,K,J,L,L)
    # tr(Q Gamma) with Gamma = g g^H equals ||Xi g||^2; the 1/L fading factor
    # stays in the power prefactor so Q is the bare Gram of Xi.
    q = np.einsum("mkjla,mkjlb->mkjab", xi.conj(), xi)
    gram = np.einsum("mknl,mknp->mklp", blocks.conj(), blocks)
    tr = np.einsum("mkll->mk", gram).real
    power_mats = gram / np.maximum(tr, 1e-300)[..., None, None]
    # normalized combiners: ||v_mk||^2 = gamma^H (C^H C / ||C||^2) gamma
    noise_mats = power_mats if direction == "ul" else None
    return q, power_mats, noise_mats


def _uncertainty_consts(estimate: MultipathEstimate, beams: BeamformerSet,
                        config: SystemConfig, direction: str,
                        gamma_ref: np.ndarray) -> np.ndarray:
    """Frozen per-user uncertainty sums Omega_k evaluated at reference weights."""
    ref = beams.with_gamma(gamma_ref)
    su2, sb2 = sigma_tilde(estimate, config, direction)
    _, sig_e, plain, plain_e = quadratic_terms(estimate, ref.vectors)
    omega = (su2[:, :, None] * sig_e + sb2[:, :, None] * plain
             + (su2 * sb2)[:, :, None] * plain_e)
    return omega.sum(axis=(0, 2))


def build_feasibility(estimate: MultipathEstimate, beams: BeamformerSet,
                      config: SystemConfig, mu: float,
                      mask: np.ndarray | None = None,
                      direction: str | None = None,
                      _cache: dict | None = None) -> SdpFeasibilityProblem:
    """Assemble the SINR + power constraint system at target mu.

    Masked (m, k) pairs carry no block (their Gamma is identically zero).
    The uncertainty sums are evaluated at the equal-power reference weights
    and held constant across the bisection.
    """
    direction = direction or beams.mode
    m_ap, k_users, _, el = beams.blocks.shape
    if mask is None:
        mask = np.ones((m_ap, k_users), dtype=bool)
    c = _prepare_cache(estimate, beams, config, direction, mask,
                       _cache if _cache is not None else {})
    q, power_mats, noise_mats, omega = c["q"], c["power"], c["noise"], c["omega"]

    pairs = [(m, k) for m in range(m_ap) for k in range(k_users) if mask[m, k]]
    index = {mk: b for b, mk in enumerate(pairs)}
    nb = len(pairs)
    power = config.dl_power if direction == "dl" else config.ul_power
    p_eff = power / el

    rows = []
    bounds = []
    for k in range(k_users):
        coeff = np.zeros((nb, el, el), dtype=complex)
        for (m, j), b in index.items():
            if j == k:
                coeff[b] -= p_eff * q[m, k, k]
                if noise_mats is not None:
                    coeff[b] += mu * config.noise_var * noise_mats[m, k]
            else:
                coeff[b] += mu * p_eff * q[m, k, j]
        rows.append(coeff)
        rhs = mu * p_eff * omega[k]
        if noise_mats is None:
            rhs += mu * config.noise_var
        bounds.append(-rhs)
    for m in range(m_ap):
        coeff = np.zeros((nb, el, el), dtype=complex)
        any_served = False
        for k in range(k_users):
            if mask[m, k]:
                coeff[index[(m, k)]] = power_mats[m, k]
                any_served = True
        if any_served:
            rows.append(coeff)
            bounds.append(1.0)
    coeffs = np.stack(rows)
    coeffs = 0.5 * (coeffs + np.conj(np.swapaxes(coeffs, 2, 3)))
    return SdpFeasibilityProblem(mu=mu, coeffs=coeffs,
                                 bounds=np.array(bounds, dtype=float),
                                 active_pairs=pairs, num_sinr=k_users)


def solve_feasibility(problem: SdpFeasibilityProblem, tol: float = 1e-9,
                      max_newton: int = 400) -> sdp_kernel.FeasibilityResult:
    """Decide one feasibility subproblem; post-checks any returned blocks."""
    res = sdp_kernel.barrier_feasibility(problem.coeffs, problem.bounds,
                                         tol=tol, max_newton=max_newton)
    if res.feasible:
        vals = np.einsum("ibjk,bkj->i", problem.coeffs, res.blocks).real
        margin = float((vals - problem.bounds).max())
        if margin > tol:
            return sdp_kernel.FeasibilityResult("undecided", slack=margin,
                                                newton_steps=res.newton_steps)
    return res


def _prepare_cache(estimate, beams, config, direction, mask,
                   cache: dict) -> dict:
    if "q" not in cache:
        cache["q"], cache["power"], cache["noise"] = _link_matrices(
            estimate, beams, config, direction)
        cache["omega"] = _uncertainty_consts(
            estimate, beams, config, direction,
            equal_power_gamma(beams.blocks, mask))
    return cache


def _sinr_upper_bound(estimate, beams, config, mask, direction,
                      _cache: dict | None = None) -> float:
    """Interference-free max-SINR bound used to initialize the bisection."""
    c = _prepare_cache(estimate, beams, config, direction, mask,
                       _cache if _cache is not None else {})
    q, power_mats, noise_mats = c["q"], c["power"], c["noise"]
    m_ap, k_users = mask.shape
    el = q.shape[-1]
    power = config.dl_power if direction == "dl" else config.ul_power
    p_eff = power / el
    bounds = []
    for k in range(k_users):
        bound_k = 0.0
        for m in range(m_ap):
            if not mask[m, k]:
                continue
            den = noise_mats[m, k] if noise_mats is not None \
                else power_mats[m, k]
            den = den + (1e-12 * np.trace(den).real / el) * np.eye(el)
            lam = scipy.linalg.eigh(q[m, k, k], den, eigvals_only=True)[-1]
            if noise_mats is not None:
                bound_k = max(bound_k, p_eff * lam / config.noise_var)
            else:
                bound_k += p_eff * lam / config.noise_var
        bounds.append(bound_k)
    # the max-min optimum cannot exceed any single user's isolated optimum
    return float(min(bounds))


@dataclass(frozen=True)
class AllocationResult:
    """Outcome of one max-min run (or a fallback allocation)."""

    gamma: np.ndarray                 # (M, K, L) complex, zero where masked
    gamma_blocks: np.ndarray | None   # (B, L, L) SDR blocks of the last solve
    mu_star: float                    # certified SINR target
    sinr: np.ndarray                  # (K,) closed-form SINRs of final gamma
    bisection_trace: list = field(default_factory=list)
    active_mask: np.ndarray | None = None
    active_pairs: list = field(default_factory=list)
    fallback_used: bool = False
    feasible: bool = True

    @property
    def sinr_spread(self) -> float:
        """Relative spread of achieved SINRs (max-min fairness residual)."""
        lo, hi = float(self.sinr.min()), float(self.sinr.max())
        return (hi - lo) / hi if hi > 0 else 0.0


def maxmin_allocation(estimate: MultipathEstimate, config: SystemConfig,
                      scheme: str = "a-mmse", direction: str = "dl",
                      mask: np.ndarray | None = None,
                      eps_rel: float = 1e-3,
                      beams: BeamformerSet | None = None) -> AllocationResult:
    """Bisection over the min-SINR target with SDR feasibility subproblems.

    Returns weights extracted from the top eigenpair of each PSD block,
    rescaled per AP if extraction breaks a power constraint; if extraction
    underperforms the equal-power baseline (rank-one gap), the baseline is
    returned instead and flagged.
    """
    m_ap, k_users = estimate.noise_var.shape
    if mask is None:
        mask = np.ones((m_ap, k_users), dtype=bool)
    if beams is None:
        beams = build_beamformers(estimate, config, scheme, direction)

    equal_gamma = equal_power_gamma(beams.blocks, mask)
    equal_sinr = closed_form_sinr(estimate, beams.with_gamma(equal_gamma),
                                  config, direction)

    if not mask.any(axis=0).all():   # some user has no serving AP
        return AllocationResult(gamma=equal_gamma, gamma_blocks=None,
                                mu_star=0.0, sinr=equal_sinr,
                                active_mask=mask, fallback_used=True,
                                feasible=False)

    cache: dict = {}
    mu_hi = _sinr_upper_bound(estimate, beams, config, mask, direction,
                              _cache=cache)
    # The equal-power point is a feasibility witness at its own min-SINR
    # (the frozen uncertainty sums are evaluated exactly there), so the
    # bisection starts from a certified-feasible floor.
    mu_lo = max(float(equal_sinr.min()) * (1.0 - 1e-9), 0.0)
    mu_hi = max(mu_hi, mu_lo)
    trace = []
    best = None
    tol = eps_rel * mu_hi
    while mu_hi - mu_lo >= tol:
        mu = 0.5 * (mu_hi + mu_lo)
        problem = build_feasibility(estimate, beams, config, mu, mask,
                                    direction, _cache=cache)
        res = solve_feasibility(problem)
        trace.append((mu, res.feasible))
        if res.feasible:
            mu_lo = mu
            best = (res.blocks, problem.active_pairs)
        else:
            mu_hi = mu

    if best is None:
        # no solve landed above the equal-power witness; return the witness
        return AllocationResult(gamma=equal_gamma, gamma_blocks=None,
                                mu_star=mu_lo, sinr=equal_sinr,
                                bisection_trace=trace, active_mask=mask,
                                fallback_used=True,
                                feasible=bool(mu_lo > 0))

    blocks, pairs = best
    el = estimate.beta.shape[-1]
    gamma = np.zeros((m_ap, k_users, el), dtype=complex)
    for b, (m, k) in enumerate(pairs):
        w, v = sdp_kernel.eigh(blocks[b])
        gamma[m, k] = np.sqrt(max(w[-1], 0.0)) * v[:, -1]

    # restore per-AP power feasibility after the rank-one extraction
    trial = beams.with_gamma(gamma)
    ap_power = trial.relative_powers().sum(axis=1)
    over = ap_power > 1.0
    if over.any():
        gamma[over] /= np.sqrt(ap_power[over])[:, None, None]
        trial = beams.with_gamma(gamma)
    sinr = closed_form_sinr(estimate, trial, config, direction)

    fallback = float(sinr.min()) < float(equal_sinr.min())
    if fallback:
        gamma, sinr = equal_gamma, equal_sinr
    return AllocationResult(gamma=gamma, gamma_blocks=blocks, mu_star=mu_lo,
                            sinr=sinr, bisection_trace=trace,
                            active_mask=mask, active_pairs=pairs,
                            fallback_used=fallback)
