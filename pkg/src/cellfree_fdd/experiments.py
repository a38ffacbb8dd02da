"""Reproducible experiment runners emitting CSV data files plus a manifest.

Each experiment resolves a full SystemConfig, fans per-trial random streams
out of the root seed, and writes deterministic CSVs: rerunning with the same
seed yields byte-identical data files regardless of the worker count,
because trials are computed independently and reduced in trial order.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .allocation import (maxmin_allocation, select_aps_uc, waterfill_dl,
                         gamma_from_shares)
from .beamforming import build_beamformers, equal_power_gamma
from .channel import apply_reciprocity, draw_channel
from .config import (Streams, SystemConfig, noise_var_for_snr, stream,
                     system_noise_var)
from .estimation import (estimate_multipath, exact_estimate, rotation_grid,
                         theoretical_mse)
from .geometry import build_layout
from .performance import (RateReport, closed_form_sinr, energy_efficiency,
                          genie_rates)
from .training import observe_pilots


@dataclass(frozen=True)
class ExperimentInfo:
    name: str
    figure: str        # figure tag the curves correspond to
    description: str


CATALOG = (
    ExperimentInfo("estimate-rmse", "2",
                   "single-path estimator RMSE vs per-antenna SNR against "
                   "the closed-form accuracy benchmarks"),
    ExperimentInfo("se-vs-snr", "3",
                   "per-user closed-form and genie spectral efficiency vs "
                   "SNR for the angle-based schemes, DL and UL"),
    ExperimentInfo("se-vs-aps", "4a",
                   "DL sum spectral efficiency vs number of APs at a fixed "
                   "total antenna count"),
    ExperimentInfo("se-vs-antennas", "4b",
                   "DL sum spectral efficiency vs antennas per AP at fixed "
                   "AP count"),
    ExperimentInfo("maxmin", "5/6",
                   "per-user rates under equal, water-filling and max-min "
                   "power control, cell-free and user-centric"),
    ExperimentInfo("ee-vs-aps", "7b",
                   "DL energy efficiency vs number of APs under equal and "
                   "max-min power control"),
    ExperimentInfo("cdf", "7a",
                   "per-user rate samples for empirical CDFs across "
                   "power-control schemes"),
)


class ExperimentError(RuntimeError):
    pass


def catalog_entries() -> tuple[ExperimentInfo, ...]:
    return CATALOG


# ---------------------------------------------------------------------------
# CSV / manifest plumbing

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    return str(value)


def _finite(value) -> bool:
    if isinstance(value, (float, np.floating)):
        return bool(np.isfinite(value))
    return True


@dataclass
class CsvSink:
    """Collects rows, drops non-finite ones (counted), writes deterministically."""

    path: str
    columns: tuple
    rows: list = field(default_factory=list)
    dropped: int = 0

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError("row length does not match schema")
        if all(_finite(v) for v in row):
            self.rows.append(row)
        else:
            self.dropped += 1

    def write(self) -> None:
        with open(self.path, "w", newline="\n") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_manifest(out_dir: str, experiment: str, config: SystemConfig,
                   options: dict, files: list[str], dropped: int) -> str:
    manifest = {
        "experiment": experiment,
        "toolkit_version": __version__,
        "seed": config.rng_seed,
        "config": config.as_dict(),
        "options": options,
        "data_files": files,
        "dropped_rows": dropped,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _map_trials(worker, args_list, workers: int):
    """Ordered map over trials, optionally across processes."""
    if workers <= 1 or len(args_list) <= 1:
        return [worker(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, args_list, chunksize=1))


# ---------------------------------------------------------------------------
# estimate-rmse: link-level single-path benchmark sweep

def _single_path_batch(rng, n, t, grid_size, rho, sigma2, trials, chunk=512):
    """Vectorized single-path trials; returns (ups_err, beta_hat) arrays.

    Per trial the spatial frequency is uniform over 90% of the unambiguous
    range and the per-snapshot path gains are unit-modulus random phases
    (the deterministic-amplitude benchmark the closed forms assume).
    """
    ant = np.arange(n)
    grid = rotation_grid(n, grid_size)
    phase_grid = np.exp(1j * np.outer(ant, grid))
    step = grid[1] - grid[0]
    errs = np.empty(trials)
    betas = np.empty(trials)
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        ups = np.pi * rng.uniform(-0.9, 0.9, size=c)
        a = np.exp(1j * np.outer(ups, ant)) / np.sqrt(n)      # (c, N)
        alpha = np.exp(2j * np.pi * rng.random((c, t)))
        noise = (rng.standard_normal((c, t, n))
                 + 1j * rng.standard_normal((c, t, n))) * np.sqrt(sigma2 / 2)
        y = np.sqrt(rho) * alpha[:, :, None] * a[:, None, :] + noise
        spec = (np.abs(np.fft.fft(y, axis=-1, norm="ortho")) ** 2).sum(axis=1)
        q = np.argmax(spec, axis=-1)                          # (c,)
        demod = y * np.exp(-2j * np.pi * q[:, None, None] * ant / n)
        vals = (np.abs(np.einsum("ctn,ng->ctg", demod, phase_grid,
                                 optimize=True)) ** 2).sum(axis=1)  # (c, G)
        g = np.argmax(vals, axis=-1)
        dphi = grid[g]
        interior = (g > 0) & (g < grid_size - 1)
        gi = np.clip(g, 1, grid_size - 2)
        lo = np.take_along_axis(vals, (gi - 1)[:, None], 1)[:, 0]
        mid = np.take_along_axis(vals, gi[:, None], 1)[:, 0]
        hi = np.take_along_axis(vals, (gi + 1)[:, None], 1)[:, 0]
        curv = lo - 2 * mid + hi
        with np.errstate(divide="ignore", invalid="ignore"):
            delta = np.clip(0.5 * (lo - hi) / curv, -1.0, 1.0) * step
        dphi = np.where(interior & (curv < 0), dphi + delta, dphi)
        dphi = np.clip(dphi, -np.pi / n, np.pi / n)
        ue = 2 * np.pi * q / n - dphi
        ue = np.mod(ue + np.pi, 2 * np.pi) - np.pi
        errs[done:done + c] = np.mod(ue - ups + np.pi, 2 * np.pi) - np.pi
        a_hat = np.exp(1j * np.outer(ue, ant)) / np.sqrt(n)
        d_hat = np.einsum("cn,ctn->ct", a_hat.conj(), y) / np.sqrt(rho)
        betas[done:done + c] = (np.abs(d_hat) ** 2).mean(axis=1)
        done += c
    return errs, betas


def run_estimate_rmse(config: SystemConfig, snrs, trials: int,
                      beta_trials: int | None = None):
    """Sweep: (snr, RMSE(upsilon) sim/theory, normalized beta bias sim/theory).

    SNR is the per-receive-antenna pilot SNR at unit large-scale gain; the
    beta metric is the normalized magnitude of the ensemble bias, matching
    the closed-form benchmark (which is a pure bias expression).
    """
    n = config.antennas_per_ap
    rows = []
    beta_trials = beta_trials or trials
    for i, snr in enumerate(snrs):
        sigma2 = noise_var_for_snr(snr, config.pilot_power, 1.0, n)
        cfg = config.with_overrides(noise_var=sigma2)
        rng = stream(config.rng_seed, "trial", i)
        errs, betas = _single_path_batch(
            rng, n, config.snapshots, config.grid_size, config.pilot_power,
            sigma2, max(trials, beta_trials))
        oracle = theoretical_mse(0.0, 1.0, cfg)
        rmse_sim = float(np.sqrt(np.mean(errs[:trials] ** 2)))
        rmse_th = float(np.sqrt(oracle.mse_upsilon))
        beta_bias = float(abs(np.mean(betas) - 1.0))
        beta_th = float(np.sqrt(oracle.mse_beta))
        rows.append((snr, rmse_sim, rmse_th, beta_bias, beta_th))
    return rows


# ---------------------------------------------------------------------------
# system-level trials

def _system_setup(config: SystemConfig, trial: int, exact: bool,
                  joint_snapshots: bool = True):
    streams = Streams.for_trial(config, trial)
    layout = build_layout(config, streams)
    real_ul = draw_channel(config, layout, streams)
    real_dl = apply_reciprocity(real_ul, config, streams)
    if exact:
        estimate = exact_estimate(real_ul, config)
    else:
        obs = observe_pilots(real_ul, config, streams)
        estimate = estimate_multipath(obs, config,
                                      joint_snapshots=joint_snapshots)
    return streams, layout, real_ul, real_dl, estimate


def _se_snr_trial(args):
    (cfg_dict, trial, snrs, schemes, genie_trials, coherent, exact) = args
    base = SystemConfig(**cfg_dict)
    out = []
    for snr in snrs:
        rows = []
        for direction, power in (("dl", base.dl_power), ("ul", base.ul_power)):
            cfg = base.with_overrides(noise_var=system_noise_var(snr, power))
            streams, _, real_ul, real_dl, est = _system_setup(cfg, trial, exact)
            real = real_dl if direction == "dl" else real_ul
            for scheme in schemes:
                beams = build_beamformers(est, cfg, scheme, direction)
                sinr = closed_form_sinr(est, beams, cfg, direction)
                closed = np.log2(1.0 + sinr)
                genie = genie_rates(real, beams, cfg, genie_trials,
                                    streams.payload, direction,
                                    coherent=coherent)
                for k in range(cfg.num_users):
                    rows.append((scheme, snr, f"rate_{direction}_closed", k,
                                 closed[k], 0.0))
                    rows.append((scheme, snr, f"rate_{direction}_genie", k,
                                 genie.rate[k], genie.stderr[k]))
                rows.append((scheme, snr, f"rate_{direction}_closed", -1,
                             float(closed.sum()), 0.0))
                rows.append((scheme, snr, f"rate_{direction}_genie", -1,
                             float(genie.rate.sum()),
                             float(np.sqrt((genie.stderr ** 2).sum()))))
        out.extend(rows)
    return out


def run_se_vs_snr(config, snrs, schemes, trials, genie_trials, workers,
                  coherent=False, exact=False):
    args = [(config.as_dict(), t, tuple(snrs), tuple(schemes), genie_trials,
             coherent, exact) for t in range(trials)]
    results = _map_trials(_se_snr_trial, args, workers)
    # average value/stderr across trials keyed by (scheme, snr, metric, user)
    acc: dict = {}
    for rows in results:
        for scheme, snr, metric, user, value, se in rows:
            acc.setdefault((scheme, snr, metric, user), []).append((value, se))
    out = []
    for key in sorted(acc, key=lambda k: (k[0], k[1], k[2], k[3])):
        vals = np.array([v for v, _ in acc[key]])
        ses = np.array([s for _, s in acc[key]])
        n = len(vals)
        spread = vals.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
        stderr = float(np.sqrt(spread ** 2 + (ses ** 2).sum() / n ** 2))
        out.append((*key, float(vals.mean()), stderr))
    return out


def _sum_se_trial(args):
    (cfg_dict, trial, schemes, exact) = args
    cfg = SystemConfig(**cfg_dict)
    _, _, _, _, est = _system_setup(cfg, trial, exact)
    out = []
    for scheme in schemes:
        beams = build_beamformers(est, cfg, scheme, "dl")
        sinr = closed_form_sinr(est, beams, cfg, "dl")
        out.append((scheme, cfg.prelog * float(np.log2(1.0 + sinr).sum())))
    return out


def _sweep_sum_se(config, sweep_cfgs, schemes, trials, workers, exact):
    """Average prelog-weighted DL sum SE per (sweep point, scheme)."""
    rows = []
    for label, cfg in sweep_cfgs:
        args = [(cfg.as_dict(), t, tuple(schemes), exact)
                for t in range(trials)]
        results = _map_trials(_sum_se_trial, args, workers)
        for s, scheme in enumerate(schemes):
            vals = np.array([res[s][1] for res in results])
            stderr = vals.std(ddof=1) / np.sqrt(len(vals)) \
                if len(vals) > 1 else 0.0
            rows.append((*label, scheme, float(vals.mean()), float(stderr)))
    return rows


def run_se_vs_aps(config, m_list, nm, snr, schemes, trials, workers,
                  exact=False):
    sweep = []
    for m in m_list:
        if nm % m:
            raise ExperimentError(f"total antennas {nm} not divisible by M={m}")
        cfg = config.with_overrides(
            num_aps=m, antennas_per_ap=nm // m,
            noise_var=system_noise_var(snr, config.dl_power))
        sweep.append(((m, nm // m), cfg))
    return _sweep_sum_se(config, sweep, schemes, trials, workers, exact)


def run_se_vs_antennas(config, n_list, snrs, schemes, trials, workers,
                       exact=False):
    rows = []
    for snr in snrs:
        sweep = []
        for n in n_list:
            cfg = config.with_overrides(
                antennas_per_ap=n,
                noise_var=system_noise_var(snr, config.dl_power))
            sweep.append(((n, snr), cfg))
        rows.extend(_sweep_sum_se(config, sweep, schemes, trials, workers,
                                  exact))
    return rows


# ---------------------------------------------------------------------------
# power-control experiments

def _pc_rates(cfg, est, scheme, direction, mask):
    """Per-user closed-form rates for equal / waterfill / maxmin control."""
    beams = build_beamformers(est, cfg, scheme, direction)
    out = {}
    eq_gamma = equal_power_gamma(beams.blocks, mask)
    out["equal"] = (closed_form_sinr(est, beams.with_gamma(eq_gamma), cfg,
                                     direction), eq_gamma, None)
    if direction == "dl":
        powers = waterfill_dl(est, cfg, mask)
        shares = powers / np.maximum(powers.sum(axis=1, keepdims=True), 1e-300)
        wf_gamma = gamma_from_shares(beams, shares)
        out["waterfill"] = (closed_form_sinr(est, beams.with_gamma(wf_gamma),
                                             cfg, direction), wf_gamma, None)
    alloc = maxmin_allocation(est, cfg, scheme=scheme, direction=direction,
                              mask=mask, beams=beams)
    out["maxmin"] = (alloc.sinr, alloc.gamma, alloc)
    return beams, out


def _maxmin_trial(args):
    (cfg_dict, trial, snr, scheme, directions, exact) = args
    base = SystemConfig(**cfg_dict)
    rate_rows = []
    trace_rows = []
    ee_rows = []
    for direction in directions:
        power = base.dl_power if direction == "dl" else base.ul_power
        cfg = base.with_overrides(noise_var=system_noise_var(snr, power))
        _, _, _, _, est = _system_setup(cfg, trial, exact)
        uc_mask = select_aps_uc(est, cfg)
        cf_mask = np.ones_like(uc_mask)
        for topology, mask in (("cf", cf_mask), ("uc", uc_mask)):
            beams, results = _pc_rates(cfg, est, scheme, direction, mask)
            for pc, (sinr, gamma, alloc) in results.items():
                rate = np.log2(1.0 + sinr)
                for k in range(cfg.num_users):
                    rate_rows.append((trial, pc, topology, direction, k,
                                      rate[k]))
                if direction == "dl":
                    report = RateReport(prelog=cfg.prelog, sinr_dl=sinr)
                    energy = energy_efficiency(
                        report, beams.with_gamma(gamma), cfg,
                        active_mask=mask)
                    ee_rows.append((trial, pc, topology, energy.ee,
                                    energy.p_total))
                if alloc is not None and topology == "cf":
                    for it, (mu, feas) in enumerate(alloc.bisection_trace):
                        trace_rows.append((trial, direction, it, mu, feas))
    return rate_rows, trace_rows, ee_rows


def run_maxmin(config, snr, scheme, directions, trials, workers, exact=False):
    args = [(config.as_dict(), t, snr, scheme, tuple(directions), exact)
            for t in range(trials)]
    results = _map_trials(_maxmin_trial, args, workers)
    rates = [r for res in results for r in res[0]]
    traces = [r for res in results for r in res[1]]
    ees = [r for res in results for r in res[2]]
    return rates, traces, ees


def _ee_trial(args):
    (cfg_dict, trial, scheme, pcs, exact) = args
    cfg = SystemConfig(**cfg_dict)
    _, _, _, _, est = _system_setup(cfg, trial, exact)
    uc_mask = select_aps_uc(est, cfg)
    cf_mask = np.ones_like(uc_mask)
    rows = []
    for topology, mask in (("cf", cf_mask), ("uc", uc_mask)):
        beams, results = _pc_rates(cfg, est, scheme, "dl", mask)
        for pc in pcs:
            sinr, gamma, _ = results[pc]
            report = RateReport(prelog=cfg.prelog, sinr_dl=sinr)
            energy = energy_efficiency(report, beams.with_gamma(gamma), cfg,
                                       active_mask=mask)
            rows.append((pc, topology, energy.ee, energy.p_total,
                         cfg.prelog * float(np.log2(1 + sinr).sum())))
    return rows


def run_ee_vs_aps(config, m_list, nm, snr, scheme, pcs, trials, workers,
                  exact=False):
    rows = []
    for m in m_list:
        if nm % m:
            raise ExperimentError(f"total antennas {nm} not divisible by M={m}")
        cfg = config.with_overrides(
            num_aps=m, antennas_per_ap=nm // m,
            noise_var=system_noise_var(snr, config.dl_power))
        args = [(cfg.as_dict(), t, scheme, tuple(pcs), exact)
                for t in range(trials)]
        results = _map_trials(_ee_trial, args, workers)
        keys = [(pc, topo) for topo in ("cf", "uc") for pc in pcs]
        for pc, topo in keys:
            vals = np.array([[r[2], r[3], r[4]] for res in results
                             for r in res if r[0] == pc and r[1] == topo])
            rows.append((m, nm // m, pc, topo, float(vals[:, 0].mean()),
                         float(vals[:, 1].mean()), float(vals[:, 2].mean())))
    return rows


def run_cdf(config, snr, scheme, pcs, trials, workers, exact=False):
    cfg = config.with_overrides(
        noise_var=system_noise_var(snr, config.dl_power))
    args = [(cfg.as_dict(), t, snr, scheme, ("dl",), exact)
            for t in range(trials)]
    results = _map_trials(_maxmin_trial, args, workers)
    rows = []
    for res in results:
        for trial, pc, topology, direction, k, rate in res[0]:
            if pc in pcs:
                rows.append((trial, pc, topology, k, rate))
    return rows
