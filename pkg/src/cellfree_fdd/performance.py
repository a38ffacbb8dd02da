"""Spectral-efficiency evaluation (closed form and genie Monte Carlo) and the
network energy model.

The closed forms average the per-snapshot SINR constituents over the
small-scale fading, whose per-path signals carry E|s|^2 = 1/L; every
transmit-power-weighted quadratic term therefore carries a 1/L factor (at
L = 1 the expressions match the single-path forms exactly). The genie rate
estimates the same constituents by Monte Carlo over fresh fading draws and
takes log2(1 + .) of the sample means, so with exact multipath components
the genie converges to the closed form as trials grow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamforming import BeamformerSet, sigma_tilde
from .channel import ChannelRealization, complex_normal
from .config import SystemConfig
from .estimation import MultipathEstimate


@dataclass(frozen=True)
class RateReport:
    """Per-user SINRs, rates (bit/s/Hz) and the training prelog kappa."""

    prelog: float
    sinr_dl: np.ndarray | None = None
    sinr_ul: np.ndarray | None = None

    @staticmethod
    def _rate(sinr):
        return None if sinr is None else np.log2(1.0 + sinr)

    @property
    def rate_dl(self):
        return self._rate(self.sinr_dl)

    @property
    def rate_ul(self):
        return self._rate(self.sinr_ul)

    def sum_rate(self, direction: str = "dl") -> float:
        r = self.rate_dl if direction == "dl" else self.rate_ul
        return float(np.sum(r))

    def min_rate(self, direction: str = "dl") -> float:
        r = self.rate_dl if direction == "dl" else self.rate_ul
        return float(np.min(r))


def quadratic_terms(estimate: MultipathEstimate, vectors: np.ndarray):
    """Per-(m, k, j) norms entering the closed forms.

    Returns (signal, sig_e, plain, plain_e) where for each (m, k, j):
      signal  = ||B^H A^H w_j||^2        sig_e   = ||B^H A^H E w_j||^2
      plain   = ||A^H w_j||^2            plain_e = ||A^H E w_j||^2
    with A, B user k's estimated matrices at AP m.
    """
    n = vectors.shape[-1]
    e_vec = np.arange(n)
    a_conj = estimate.steering.conj()                       # (M,K,N,L)
    sqrtb = np.sqrt(estimate.beta)                          # (M,K,L)
    we = vectors * e_vec                                    # (M,K,N)
    proj = np.einsum("mknl,mjn->mkjl", a_conj, vectors)     # A^H w
    proj_e = np.einsum("mknl,mjn->mkjl", a_conj, we)        # A^H E w
    signal = (np.abs(sqrtb[:, :, None, :] * proj) ** 2).sum(-1)
    sig_e = (np.abs(sqrtb[:, :, None, :] * proj_e) ** 2).sum(-1)
    plain = (np.abs(proj) ** 2).sum(-1)
    plain_e = (np.abs(proj_e) ** 2).sum(-1)
    return signal, sig_e, plain, plain_e


def closed_form_sinr(estimate: MultipathEstimate, beams: BeamformerSet,
                     config: SystemConfig,
                     direction: str | None = None) -> np.ndarray:
    """Per-user closed-form SINR for the given beamformer/combiner set."""
    direction = direction or beams.mode
    k_users = estimate.beta.shape[1]
    el = estimate.beta.shape[2]
    power = config.dl_power if direction == "dl" else config.ul_power
    p_eff = power / el
    su2, sb2 = sigma_tilde(estimate, config, direction)

    signal, sig_e, plain, plain_e = quadratic_terms(estimate, beams.vectors)
    omega = (su2[:, :, None] * sig_e + sb2[:, :, None] * plain
             + (su2 * sb2)[:, :, None] * plain_e)

    diag = np.einsum("mkk->mk", signal)
    s_k = diag.sum(axis=0)                                   # (K,)
    i_k = signal.sum(axis=(0, 2)) - diag.sum(axis=0)
    omega_k = omega.sum(axis=(0, 2))
    if direction == "dl":
        noise = config.noise_var * np.ones(k_users)
    else:
        noise = config.noise_var * \
            (np.abs(beams.vectors) ** 2).sum(axis=-1).sum(axis=0)
    return p_eff * s_k / (p_eff * (i_k + omega_k) + noise)


def closed_form_rates(estimate: MultipathEstimate, config: SystemConfig,
                      beams_dl: BeamformerSet | None = None,
                      beams_ul: BeamformerSet | None = None) -> RateReport:
    sinr_dl = closed_form_sinr(estimate, beams_dl, config, "dl") \
        if beams_dl is not None else None
    sinr_ul = closed_form_sinr(estimate, beams_ul, config, "ul") \
        if beams_ul is not None else None
    return RateReport(prelog=config.prelog, sinr_dl=sinr_dl, sinr_ul=sinr_ul)


@dataclass(frozen=True)
class GenieRates:
    """Monte-Carlo rate estimate: log2(1 + mean-signal / mean-denominator).

    ``stderr`` propagates the (numerator, denominator) sample covariance
    through the log; ``rate_ergodic`` is the companion mean of per-draw
    log2(1 + SINR) values.
    """

    rate: np.ndarray           # (K,) bit/s/Hz
    stderr: np.ndarray         # (K,)
    rate_ergodic: np.ndarray   # (K,)
    trials: int


def genie_rates(realization: ChannelRealization, beams: BeamformerSet,
                config: SystemConfig, trials: int, rng: np.random.Generator,
                direction: str | None = None, coherent: bool = False,
                chunk: int = 256) -> GenieRates:
    """Genie-aided rates over fresh small-scale fading draws.

    Per draw, user k's signal is sum_m ||h_mk^H w_mk||^2 (or the coherent
    |sum_m h_mk^H w_mk|^2 with ``coherent``) and the interference sums
    ||h_mk^H w_mj||^2 over j != k; the channel h is rebuilt from the
    realization's angles and large-scale gains with new path gains each draw.
    """
    direction = direction or beams.mode
    m_ap, k_users, n, el = realization.steering.shape
    power = config.dl_power if direction == "dl" else config.ul_power
    if direction == "dl":
        noise = config.noise_var * np.ones(k_users)
    else:
        noise = config.noise_var * \
            (np.abs(beams.vectors) ** 2).sum(axis=-1).sum(axis=0)

    weighted = realization.steering * \
        np.sqrt(realization.beta / el)[:, :, None, :]        # (M,K,N,L)
    w = beams.vectors

    sum_num = np.zeros(k_users)
    sum_den = np.zeros(k_users)
    sum_num2 = np.zeros(k_users)
    sum_den2 = np.zeros(k_users)
    sum_nd = np.zeros(k_users)
    sum_log = np.zeros(k_users)
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        alpha = complex_normal(rng, (t, m_ap, k_users, el))
        h = np.einsum("mknl,tmkl->tmkn", weighted, alpha)
        inner = np.einsum("tmkn,mjn->tmkj", h.conj(), w)
        if coherent:
            num = np.abs(np.einsum("tmkk->tk", inner)) ** 2
        else:
            num = (np.abs(np.einsum("tmkk->tmk", inner)) ** 2).sum(axis=1)
        all_pow = (np.abs(inner) ** 2).sum(axis=1)            # (t, K, K)
        own = (np.abs(np.einsum("tmkk->tmk", inner)) ** 2).sum(axis=1)
        intf = all_pow.sum(axis=-1) - own
        den = power * intf + noise[None, :]
        num = power * num
        sum_num += num.sum(axis=0)
        sum_den += den.sum(axis=0)
        sum_num2 += (num ** 2).sum(axis=0)
        sum_den2 += (den ** 2).sum(axis=0)
        sum_nd += (num * den).sum(axis=0)
        sum_log += np.log2(1.0 + num / den).sum(axis=0)
        done += t

    nbar = sum_num / trials
    dbar = sum_den / trials
    rate = np.log2(1.0 + nbar / dbar)
    var_n = sum_num2 / trials - nbar ** 2
    var_d = sum_den2 / trials - dbar ** 2
    cov = sum_nd / trials - nbar * dbar
    gn = 1.0 / (np.log(2.0) * (dbar + nbar))
    gd = -nbar / (np.log(2.0) * dbar * (dbar + nbar))
    var_rate = (gn ** 2 * var_n + gd ** 2 * var_d + 2 * gn * gd * cov) / trials
    return GenieRates(rate=rate, stderr=np.sqrt(np.maximum(var_rate, 0.0)),
                      rate_ergodic=sum_log / trials, trials=trials)


@dataclass(frozen=True)
class EnergyReport:
    """Network power breakdown and the resulting energy efficiency."""

    p_per_ap: np.ndarray       # (M,) amplifier + circuit watts, 0 if AP idle
    p_backhaul: np.ndarray     # (M,) backhaul watts, 0 if AP idle
    throughput: float          # bit/s, prelog-weighted
    ee: float                  # bit/joule

    @property
    def p_total(self) -> float:
        return float(self.p_per_ap.sum() + self.p_backhaul.sum())


def energy_efficiency(rates: RateReport, beams: BeamformerSet,
                      config: SystemConfig,
                      active_mask: np.ndarray | None = None) -> EnergyReport:
    """Total-power model: per-AP amplifier + circuit power plus per-backhaul
    fixed and traffic-dependent power; idle APs (serving no user) are off.

    The amplifier term spends dl_power * N * sum_k ||w_mk||^2 / efficiency
    watts at AP m; backhaul traffic counts only the users the AP serves.
    """
    m_ap, k_users, n = beams.vectors.shape
    if active_mask is None:
        active_mask = np.ones((m_ap, k_users), dtype=bool)
    rate = rates.rate_dl if rates.sinr_dl is not None else rates.rate_ul
    kappa = rates.prelog
    w_pow = (np.abs(beams.vectors) ** 2).sum(axis=-1)        # (M, K)
    ap_on = active_mask.any(axis=1)

    p_amp = (config.dl_power / config.amp_efficiency) * n * w_pow.sum(axis=1)
    p_ap = np.where(ap_on, p_amp + n * config.power_tc, 0.0)
    traffic = config.bandwidth * kappa * \
        (np.where(active_mask, rate[None, :], 0.0)).sum(axis=1)
    p_bh = np.where(ap_on, config.power_fixed_bh + traffic * config.power_bt,
                    0.0)
    throughput = config.bandwidth * kappa * float(rate.sum())
    p_total = float(p_ap.sum() + p_bh.sum())
    ee = throughput / p_total if p_total > 0 else 0.0
    return EnergyReport(p_per_ap=p_ap, p_backhaul=p_bh, throughput=throughput,
                        ee=ee)
