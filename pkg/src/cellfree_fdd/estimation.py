"""Multipath component estimation from pilot-matched observations.

The estimator locates each path's spatial frequency by picking peaks of the
unitary DFT spectrum and refining them with a phase-progression ("angle
rotation") sweep over [-pi/N, pi/N], then recovers the large-scale gains by
maximum likelihood through the fitted steering basis:

    D_hat = pinv(A_hat) @ Ybar / sqrt(rho),   beta_hat = diag((L/T) D D^H).

By default all T snapshots enter one noncoherent objective (spectra and
rotation costs summed over snapshots) so that weak-fading snapshots cannot
derail the peak search; the per-snapshot estimate-then-average variant is
retained behind ``joint_snapshots=False`` for sensitivity studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator

from .channel import ChannelRealization, steering_from_spatial_freq
from .config import SystemConfig
from .training import PilotObservation

#: Spatial frequencies closer than this are treated as coincident and the
#: duplicate is nudged so the fitted steering basis stays full rank.
_DUPLICATE_TOL = 1e-9
_DUPLICATE_NUDGE = 1e-6


def dft_spectrum(y: np.ndarray) -> np.ndarray:
    """Squared magnitudes of the unitary DFT of ``y`` along its last axis."""
    return np.abs(np.fft.fft(y, axis=-1, norm="ortho")) ** 2


def rotation_grid(n_antennas: int, grid_size: int) -> np.ndarray:
    """Inclusive uniform grid on [-pi/N, pi/N], exactly antisymmetric so the
    smallest-|rotation| tie rule is well defined in floating point."""
    g = np.linspace(-np.pi / n_antennas, np.pi / n_antennas, grid_size)
    return 0.5 * (g - g[::-1])


def pick_peaks(spectrum: np.ndarray, num_paths: int) -> tuple[np.ndarray, bool]:
    """Greedy peak selection with a circular exclusion window.

    Bins are taken in descending magnitude (ties to the lower index); after
    each accepted peak, bins within ceil(N / (2 L)) of it are excluded. If the
    exclusion leaves fewer than L candidates, the remaining picks fall back to
    the best excluded bins. Returns (indices, degenerate) where ``degenerate``
    reports that exclusion changed the selection, i.e. the top-L raw bins were
    not mutually separable.
    """
    spectrum = np.asarray(spectrum, dtype=float)
    n = spectrum.shape[0]
    if num_paths > n:
        raise ValueError(f"cannot pick {num_paths} peaks from {n} bins")
    # descending magnitude, ties by lower index
    order = np.lexsort((np.arange(n), -spectrum))
    window = int(np.ceil(n / (2 * num_paths)))
    excluded = np.zeros(n, dtype=bool)
    picks: list[int] = []
    for q in order:
        if len(picks) == num_paths:
            break
        if not excluded[q]:
            picks.append(int(q))
            dist = np.abs(np.arange(n) - q)
            excluded |= np.minimum(dist, n - dist) <= window
    exhausted = len(picks) < num_paths
    if exhausted:  # best-effort: refill from the excluded bins
        for q in order:
            if len(picks) == num_paths:
                break
            if int(q) not in picks:
                picks.append(int(q))
    degenerate = exhausted or set(picks) != set(int(q) for q in order[:num_paths])
    return np.array(picks), degenerate


def rotate_refine(y: np.ndarray, q_ini: int, grid_size: int,
                  parabolic: bool = True) -> tuple[float, float]:
    """Refine the peak at bin ``q_ini`` with the angle-rotation sweep.

    ``y`` holds one snapshot (N,) or a block (T, N) whose rotation costs are
    summed. The sweep maximizes |f_q^T Phi(dphi) y|^2 over ``grid_size``
    equispaced points spanning [-pi/N, pi/N] inclusive; exact ties resolve to
    the smallest |dphi|. With ``parabolic`` a three-point quadratic fit around
    the winning grid point interpolates between grid samples (never moving
    more than one step). Returns (dphi_hat, upsilon_hat) with
    upsilon_hat = 2 pi q / N - dphi_hat wrapped to [-pi, pi).
    """
    y = np.atleast_2d(np.asarray(y))
    n = y.shape[-1]
    grid = rotation_grid(n, grid_size)
    ant = np.arange(n)
    demod = y * np.exp(-2j * np.pi * q_ini * ant / n)
    vals = (np.abs(demod @ np.exp(1j * np.outer(ant, grid))) ** 2).sum(axis=0)
    best = int(np.argmax(vals))
    # ties (within float tolerance) resolve to the smallest rotation
    ties = np.flatnonzero(vals >= vals[best] * (1.0 - 1e-12))
    if ties.size > 1:
        best = int(ties[np.argmin(np.abs(grid[ties]))])
    dphi = grid[best]
    if parabolic and 0 < best < grid_size - 1:
        lo, mid, hi = vals[best - 1], vals[best], vals[best + 1]
        curv = lo - 2.0 * mid + hi
        if curv < 0:
            step = grid[1] - grid[0]
            dphi += np.clip(0.5 * (lo - hi) / curv, -1.0, 1.0) * step
            dphi = float(np.clip(dphi, -np.pi / n, np.pi / n))
    ups = 2.0 * np.pi * q_ini / n - dphi
    ups = np.mod(ups + np.pi, 2.0 * np.pi) - np.pi
    return float(dphi), float(ups)


def _estimate_spatial_freqs(block: np.ndarray, num_paths: int, grid_size: int,
                            joint: bool, domain: str, eta: float,
                            parabolic: bool = True):
    """Spatial frequencies for one (T, N) pilot block.

    Returns (upsilon (L,), q (L,), dphi (L,), degenerate).
    """
    t = block.shape[0]
    if joint or t == 1:
        spec = dft_spectrum(block).sum(axis=0)
        peaks, degenerate = pick_peaks(spec, num_paths)
        out = [rotate_refine(block, q, grid_size, parabolic) for q in peaks]
        dphi = np.array([o[0] for o in out])
        ups = np.array([o[1] for o in out])
        return ups, peaks, dphi, degenerate

    # Per-snapshot variant: estimate each snapshot, associate paths to the
    # first snapshot's ordering by nearest spatial frequency, then average.
    ups_t = np.empty((t, num_paths))
    qs = np.empty((t, num_paths), dtype=int)
    dphis = np.empty((t, num_paths))
    degenerate = False
    for i in range(t):
        spec = dft_spectrum(block[i])
        peaks, deg = pick_peaks(spec, num_paths)
        degenerate |= deg
        for l, q in enumerate(peaks):
            dphis[i, l], ups_t[i, l] = rotate_refine(block[i], q, grid_size,
                                                     parabolic)
        qs[i] = peaks
        if i > 0:
            diff = np.abs(ups_t[i][None, :] - ups_t[0][:, None])
            cost = np.minimum(diff, 2.0 * np.pi - diff)
            _, perm = linear_sum_assignment(cost)
            ups_t[i] = ups_t[i, perm]
            qs[i] = qs[i, perm]
            dphis[i] = dphis[i, perm]
    if domain == "phi":
        phis = np.arcsin(np.clip(ups_t / eta, -1.0, 1.0))
        ups = eta * np.sin(phis.mean(axis=0))
    else:
        ups = ups_t.mean(axis=0)
    return ups, qs[0], dphis.mean(axis=0), degenerate


def _fit_path_gains(block: np.ndarray, upsilon: np.ndarray, rho: float,
                    debias: bool = True):
    """ML fit of per-path signals and large-scale gains for fixed angles.

    The raw gain estimate diag((L/T) D D^H) carries a positive noise bias of
    L * sigma_n^2 / rho * diag((A^H A)^{-1}) (the dominant term of its
    closed-form error); with ``debias`` the plug-in bias estimate is
    subtracted so downstream consumers see gains that vanish for links buried
    in noise. Returns (steering (N, L), d_hat (L, T), beta_hat (L,),
    noise_var_hat, duplicates_nudged).
    """
    ups = np.array(upsilon, dtype=float)
    nudged = False
    for i in range(1, ups.size):
        while np.any(np.abs(ups[:i] - ups[i]) < _DUPLICATE_TOL):
            ups[i] += _DUPLICATE_NUDGE
            nudged = True
    n, t = block.shape[1], block.shape[0]
    a_hat = steering_from_spatial_freq(ups, n).T          # (N, L)
    gram_inv = np.linalg.pinv(a_hat.conj().T @ a_hat)
    d_hat = gram_inv @ a_hat.conj().T @ block.T / np.sqrt(rho)  # (L, T)
    num_paths = ups.size
    r_d = (num_paths / t) * (d_hat @ d_hat.conj().T)
    beta_hat = np.maximum(np.diag(r_d).real, 0.0)
    resid = block.T - np.sqrt(rho) * a_hat @ d_hat
    noise_var_hat = float(np.sum(np.abs(resid) ** 2) / (n * t))
    if debias:
        bias = num_paths * noise_var_hat / rho * np.diag(gram_inv).real
        beta_hat = np.maximum(beta_hat - bias, 0.0)
    return a_hat, d_hat, beta_hat, noise_var_hat, nudged


class MultipathEstimator(BaseEstimator):
    """Scikit-learn style front end for the angle / large-scale estimator.

    Parameters mirror the pipeline defaults; ``fit`` consumes one pilot block
    with snapshots as rows (shape (T, N) or (N,) for a single snapshot).

    Attributes ending in an underscore are populated by ``fit``:
    ``upsilon_``, ``phi_``, ``beta_``, ``steering_``, ``path_signals_``,
    ``noise_var_``, ``peak_bins_``, ``rotations_``, ``degenerate_``.
    """

    def __init__(self, num_paths=1, grid_size=100, spacing_ratio=0.5,
                 pilot_power=1.0, joint_snapshots=True, average_domain="phi",
                 parabolic=True, debias=True):
        self.num_paths = num_paths
        self.grid_size = grid_size
        self.spacing_ratio = spacing_ratio
        self.pilot_power = pilot_power
        self.joint_snapshots = joint_snapshots
        self.average_domain = average_domain
        self.parabolic = parabolic
        self.debias = debias

    def _validate(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise ValueError(f"expected a (T, N) pilot block, got shape {X.shape}")
        if not np.all(np.isfinite(X.real)) or not np.all(np.isfinite(X.imag)):
            raise ValueError("pilot block contains non-finite entries")
        if X.shape[1] < self.num_paths:
            raise ValueError("need at least as many antennas as paths")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if self.average_domain not in ("phi", "upsilon"):
            raise ValueError("average_domain must be 'phi' or 'upsilon'")
        return X.astype(complex, copy=False)

    def fit(self, X, y=None):
        X = self._validate(X)
        eta = 2.0 * np.pi * self.spacing_ratio
        ups, peaks, dphi, degenerate = _estimate_spatial_freqs(
            X, self.num_paths, self.grid_size, self.joint_snapshots,
            self.average_domain, eta, self.parabolic)
        a_hat, d_hat, beta_hat, nvar, nudged = _fit_path_gains(
            X, ups, self.pilot_power, self.debias)
        self.upsilon_ = ups
        self.phi_ = np.arcsin(np.clip(ups / eta, -1.0, 1.0))
        self.beta_ = beta_hat
        self.steering_ = a_hat
        self.path_signals_ = d_hat
        self.noise_var_ = nvar
        self.peak_bins_ = np.atleast_1d(peaks)
        self.rotations_ = np.atleast_1d(dphi)
        self.degenerate_ = bool(degenerate or nudged)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Estimated path angles (rad) for one pilot block or a stack of them."""
        X = np.asarray(X)
        if X.ndim <= 2:
            return MultipathEstimator(**self.get_params()).fit(X).phi_
        return np.stack([MultipathEstimator(**self.get_params()).fit(x).phi_
                         for x in X])


@dataclass(frozen=True)
class MultipathEstimate:
    """Estimated components for every (m, k) link."""

    phi: np.ndarray           # (M, K, L)
    upsilon: np.ndarray       # (M, K, L)
    beta: np.ndarray          # (M, K, L)
    steering: np.ndarray      # (M, K, N, L)
    path_signals: np.ndarray  # (M, K, L, T)
    noise_var: np.ndarray     # (M, K)
    peak_bins: np.ndarray     # (M, K, L)
    rotations: np.ndarray     # (M, K, L)
    degenerate: np.ndarray    # (M, K) bool
    exact: bool = False       # ground-truth feed (no estimation error)

    def gain_diag(self, m: int, k: int) -> np.ndarray:
        return np.diag(np.sqrt(self.beta[m, k]))


def estimate_multipath(obs: PilotObservation,
                       config: SystemConfig,
                       joint_snapshots: bool = True,
                       average_domain: str = "phi",
                       debias: bool = True) -> MultipathEstimate:
    """Run the estimator independently for every (m, k) pilot block."""
    m_ap, k_users, n, t = obs.ybar.shape
    el = config.num_paths
    est = MultipathEstimator(num_paths=el, grid_size=config.grid_size,
                             spacing_ratio=config.antenna_spacing_ratio,
                             pilot_power=obs.pilot_power,
                             joint_snapshots=joint_snapshots,
                             average_domain=average_domain, debias=debias)
    phi = np.empty((m_ap, k_users, el))
    ups = np.empty_like(phi)
    beta = np.empty_like(phi)
    steering = np.empty((m_ap, k_users, n, el), dtype=complex)
    d_hat = np.empty((m_ap, k_users, el, t), dtype=complex)
    nvar = np.empty((m_ap, k_users))
    peaks = np.empty((m_ap, k_users, el), dtype=int)
    rot = np.empty_like(phi)
    degen = np.zeros((m_ap, k_users), dtype=bool)
    for m in range(m_ap):
        for k in range(k_users):
            est.fit(obs.ybar[m, k].T)
            phi[m, k] = est.phi_
            ups[m, k] = est.upsilon_
            beta[m, k] = est.beta_
            steering[m, k] = est.steering_
            d_hat[m, k] = est.path_signals_
            nvar[m, k] = est.noise_var_
            peaks[m, k] = est.peak_bins_
            rot[m, k] = est.rotations_
            degen[m, k] = est.degenerate_
    return MultipathEstimate(phi=phi, upsilon=ups, beta=beta, steering=steering,
                             path_signals=d_hat, noise_var=nvar,
                             peak_bins=peaks, rotations=rot, degenerate=degen)


def exact_estimate(realization: ChannelRealization,
                   config: SystemConfig) -> MultipathEstimate:
    """Package ground-truth components in estimate form (oracle feeds)."""
    ups = np.mod(realization.upsilon + np.pi, 2.0 * np.pi) - np.pi
    n = config.antennas_per_ap
    q = np.mod(np.rint(n * realization.upsilon / (2.0 * np.pi)), n).astype(int)
    dphi = 2.0 * np.pi * q / n - realization.upsilon
    dphi = np.mod(dphi + np.pi, 2.0 * np.pi) - np.pi
    d_true = np.sqrt(realization.beta[..., None] / config.num_paths) \
        * realization.alpha
    return MultipathEstimate(
        phi=np.arcsin(np.clip(ups / config.eta, -1.0, 1.0)),
        upsilon=ups, beta=realization.beta.copy(),
        steering=realization.steering.copy(), path_signals=d_true,
        noise_var=np.full(realization.beta.shape[:2], config.noise_var),
        peak_bins=q, rotations=dphi,
        degenerate=np.zeros(realization.beta.shape[:2], dtype=bool),
        exact=True)


@dataclass(frozen=True)
class MseOracle:
    """Closed-form single-path estimation accuracy benchmarks."""

    mse_upsilon: np.ndarray | float
    mse_phi: np.ndarray | float
    mse_beta: np.ndarray | float


def theoretical_mse(phi, beta, config: SystemConfig) -> MseOracle:
    """Single-path benchmark MSEs of (upsilon, phi, beta).

    Evaluated with E = diag(0..N-1) and the projection onto the steering
    vector's orthogonal complement; information from the T collected
    snapshots adds, so the spatial-frequency MSE is

        sigma_n^2 / (2 T rho beta a^H E Pperp E a).

    The beta benchmark is the squared estimator bias (noise energy passing
    the pseudo-inverse plus the angle-error coupling); the phi form rescales
    the upsilon MSE by the arcsin derivative and is +inf at endfire.
    """
    phi = np.asarray(phi, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = config.antennas_per_ap
    rho = config.pilot_power
    sigma2 = config.noise_var
    t = config.snapshots
    eta = config.eta

    a = steering_from_spatial_freq(eta * np.sin(phi), n)   # (..., N)
    e = np.arange(n)
    ea = e * a
    a_h_ea = np.einsum("...n,...n->...", a.conj(), ea)
    curvature = (np.einsum("...n,...n->...", ea.conj(), ea)
                 - np.abs(a_h_ea) ** 2).real              # a^H E Pperp E a

    mse_ups = sigma2 / (2.0 * t * rho * beta * curvature)
    sin2 = np.clip(np.sin(phi) ** 2, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        mse_phi = np.where(sin2 < 1.0,
                           mse_ups / (eta ** 2 * np.maximum(1.0 - sin2, 1e-300)),
                           np.inf)
    mse_beta = (beta * mse_ups * np.abs(a_h_ea) ** 2 + sigma2 / rho) ** 2
    if phi.ndim == 0:
        return MseOracle(float(mse_ups), float(mse_phi), float(mse_beta))
    return MseOracle(mse_ups, mse_phi, mse_beta)


def estimation_uncertainty(estimate: MultipathEstimate,
                           config: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-(m, k) estimation-error variances from the single-path oracle.

    Evaluated at each link's strongest estimated path; used as the
    sigma-tilde terms of the robust beamformer and the closed-form rates.
    The spatial-frequency variance is capped at the coarse-search ceiling
    (a detected peak pins the estimate within half a DFT bin, so the
    low-SNR divergence of the closed form does not describe the estimator).
    """
    idx = np.argmax(estimate.beta, axis=-1)
    m_idx, k_idx = np.meshgrid(np.arange(idx.shape[0]), np.arange(idx.shape[1]),
                               indexing="ij")
    phi = estimate.phi[m_idx, k_idx, idx]
    beta = np.maximum(estimate.beta[m_idx, k_idx, idx], 1e-300)
    oracle = theoretical_mse(phi, beta, config)
    ceiling = (np.pi / config.antennas_per_ap) ** 2 / 3.0
    mse_ups = np.minimum(np.asarray(oracle.mse_upsilon), ceiling)
    a_h_ea = (config.antennas_per_ap - 1) / 2.0
    mse_beta = (beta * mse_ups * a_h_ea ** 2
                + config.noise_var / config.pilot_power) ** 2
    return mse_ups, mse_beta
