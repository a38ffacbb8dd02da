"""Dense Hermitian linear algebra and a barrier feasibility solver.

This is the numerical core under the max-min allocation: a cyclic-Jacobi
eigendecomposition for small Hermitian matrices, PSD projection, and a
phase-I Newton barrier method deciding feasibility of systems

    find  X_1, ..., X_B  (Hermitian PSD, each L x L)
    s.t.  sum_b tr(C_ib X_b) <= b_i,   i = 1..m.

The barrier Hessian splits into closed-form per-block parts (the log-det
term, whose inverse action is V -> X V X) plus one rank-one term per linear
constraint, so each Newton system is solved with a Woodbury correction of
size m x m instead of a dense factorization over all B*L^2 variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HermitianError(ValueError):
    """Input matrix is not (numerically) Hermitian."""


class HermitianBlock:
    """Hermitian matrix stored as its lower triangle.

    Construction validates conjugate symmetry, so a materialized block
    satisfies A == A^H exactly.
    """

    __slots__ = ("dim", "_tril")

    def __init__(self, matrix, tol: float = 1e-10):
        a = np.asarray(matrix, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise HermitianError(f"expected a square matrix, got {a.shape}")
        scale = max(float(np.abs(a).max()), 1.0)
        if np.abs(a - a.conj().T).max() > tol * scale:
            raise HermitianError("matrix is not Hermitian")
        self.dim = a.shape[0]
        self._tril = np.tril(a)

    def full(self) -> np.ndarray:
        strict = np.tril(self._tril, -1)
        return strict + strict.conj().T + np.diag(np.diag(self._tril).real)


def _as_hermitian_array(block) -> np.ndarray:
    if isinstance(block, HermitianBlock):
        return block.full()
    return HermitianBlock(block).full()


def eigh(block, tol: float = 1e-13, max_sweeps: int = 60):
    """Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, unitary eigenvector matrix V) with
    A @ V == V @ diag(w). Unconditionally stable for the small dimensions
    used here; no LAPACK round trip.
    """
    a = _as_hermitian_array(block)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    if n == 1:
        return a.real.diagonal().copy(), v
    scale = max(float(np.abs(a).max()), 1.0)
    for _ in range(max_sweeps):
        off = np.abs(np.triu(a, 1)).max() if n > 1 else 0.0
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale:
                    continue
                theta = np.angle(apq)
                app, aqq = a[p, p].real, a[q, q].real
                tau = (aqq - app) / (2.0 * abs(apq))
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) \
                    if tau != 0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                j = np.eye(n, dtype=complex)
                j[p, p] = c
                j[q, q] = c
                j[p, q] = s * np.exp(1j * theta)
                j[q, p] = -s * np.exp(-1j * theta)
                a = j.conj().T @ a @ j
                v = v @ j
    w = a.diagonal().real.copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def nearest_psd(block) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clip negative eigenvalues at zero."""
    w, v = eigh(block)
    clipped = (v * np.maximum(w, 0.0)) @ v.conj().T
    return 0.5 * (clipped + clipped.conj().T)


@dataclass(frozen=True)
class FeasibilityResult:
    status: str                       # "feasible" | "infeasible" | "undecided"
    blocks: np.ndarray | None = None  # (B, L, L) strictly feasible assignment
    slack: float = np.nan             # final phase-I slack (scaled units)
    newton_steps: int = 0
    trace: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def _max_psd_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha <= 1 keeping every X_b + alpha dX_b positive definite,
    computed from the stacked generalized eigenvalues of (X, dX)."""
    chol = np.linalg.cholesky(x)
    li = np.linalg.inv(chol)
    m = li @ dx @ np.conj(np.swapaxes(li, 1, 2))
    lam_min = float(np.linalg.eigvalsh(
        0.5 * (m + np.conj(np.swapaxes(m, 1, 2)))).min())
    if lam_min >= 0:
        return 1.0
    return min(1.0, -0.99 / lam_min)


def barrier_feasibility(coeffs, bounds, tol: float = 1e-9,
                        max_newton: int = 200, t_init: float = 1.0,
                        t_factor: float = 25.0,
                        newton_tol: float = 1e-9) -> FeasibilityResult:
    """Phase-I slack minimization: min s s.t. tr(C_i X) - b_i <= s, X PSD.

    ``coeffs`` has shape (m, B, L, L) with Hermitian (i, b) slices; ``bounds``
    has shape (m,). Feasible as soon as an iterate is strictly interior;
    infeasible once the duality gap certifies min slack > 0; undecided at the
    iteration cap (callers should treat that conservatively).
    Deterministic for identical inputs. Certification of infeasibility
    assumes the constraint set bounds X (true for per-AP power constraints).
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.ndim != 4 or coeffs.shape[2] != coeffs.shape[3]:
        raise ValueError(f"coeffs must be (m, B, L, L), got {coeffs.shape}")
    herm_err = np.abs(coeffs - np.conj(np.swapaxes(coeffs, 2, 3))).max()
    if herm_err > 1e-10 * max(1.0, float(np.abs(coeffs).max())):
        raise HermitianError("constraint coefficients must be Hermitian")
    m, nblocks, dim, _ = coeffs.shape
    bounds = np.asarray(bounds, dtype=float)

    # normalize each constraint to O(1)
    scale = np.maximum(np.abs(bounds),
                       np.sqrt((np.abs(coeffs) ** 2).sum(axis=(1, 2, 3))))
    scale = np.maximum(scale, 1e-300)
    coeffs = coeffs / scale[:, None, None, None]
    bounds = bounds / scale

    nu = m + nblocks * dim            # barrier parameter
    eye = np.broadcast_to(np.eye(dim), (nblocks, dim, dim))
    x = np.array(eye, dtype=complex)

    def constraint_values(blocks):
        return np.einsum("ibjk,bkj->i", coeffs, blocks, optimize=True).real

    s = float(constraint_values(x).max() - bounds.min() + 1.0)
    t = t_init
    steps = 0
    trace = []
    feas_margin = max(tol, 1e-12)

    while steps < max_newton:
        # center for current t
        for _ in range(max_newton - steps):
            steps += 1
            vals = constraint_values(x)
            violation = float((vals - bounds).max())
            if violation < -feas_margin:
                return FeasibilityResult("feasible", blocks=x.copy(),
                                         slack=violation, newton_steps=steps,
                                         trace=trace)
            u = s + bounds - vals
            if np.any(u <= 0):  # line search guarantees this; safety net
                return FeasibilityResult("undecided", slack=s,
                                         newton_steps=steps, trace=trace)
            inv_u = 1.0 / u
            sigma = inv_u ** 2
            try:
                x_inv = np.linalg.inv(x)
            except np.linalg.LinAlgError:
                return FeasibilityResult("undecided", slack=s,
                                         newton_steps=steps, trace=trace)
            x_inv = 0.5 * (x_inv + np.conj(np.swapaxes(x_inv, 1, 2)))

            grad_s = t - inv_u.sum()
            grad_x = np.einsum("i,ibjk->bjk", inv_u, coeffs, optimize=True) - x_inv

            # Woodbury pieces: D^{-1} V = X V X ; core = diag(1/sigma) + G
            cx = np.matmul(coeffs, x[None])                   # (m, B, L, L)
            gram = np.einsum("ibjk,lbkj->il", cx, cx, optimize=True).real
            core = np.diag(1.0 / sigma) + gram

            def k_inv(v):
                w = x @ v @ x
                y = np.einsum("ibjk,bkj->i", coeffs, w, optimize=True).real
                z = np.linalg.solve(core, y)
                corr = np.einsum("i,ibjk->bjk", z, coeffs, optimize=True)
                return w - x @ corr @ x

            h = -np.einsum("i,ibjk->bjk", sigma, coeffs, optimize=True)  # d2F/(ds dX)
            h_ss = sigma.sum()
            rhs_x = -grad_x
            try:
                kinv_rhs = k_inv(rhs_x)
                kinv_h = k_inv(h)
            except np.linalg.LinAlgError:
                # degenerate geometry (typically an empty-interior boundary
                # case); callers treat this conservatively
                return FeasibilityResult("undecided", slack=s,
                                         newton_steps=steps, trace=trace)
            dot = lambda a, b: np.einsum("bjk,bkj->", a, b).real
            denom = h_ss - dot(h, kinv_h)
            if not np.isfinite(denom) or denom <= 0:
                return FeasibilityResult("undecided", slack=s,
                                         newton_steps=steps, trace=trace)
            ds = (-grad_s - dot(h, kinv_rhs)) / denom
            dx = kinv_rhs - ds * kinv_h
            dx = 0.5 * (dx + np.conj(np.swapaxes(dx, 1, 2)))

            # Newton decrement
            lam2 = float(-(grad_s * ds + dot(grad_x, dx)))
            if lam2 / 2.0 <= newton_tol:
                break

            # step limit: keep u > 0 and X strictly PD
            du = ds - np.einsum("ibjk,bkj->i", coeffs, dx,
                                optimize=True).real
            alpha = 1.0
            neg = du < 0
            if np.any(neg):
                alpha = min(alpha, float(0.99 * np.min(-u[neg] / du[neg])))
            try:
                alpha = min(alpha, _max_psd_step(x, dx))
            except np.linalg.LinAlgError:
                return FeasibilityResult("undecided", slack=s,
                                         newton_steps=steps, trace=trace)

            def objective(sv, xv):
                uu = sv + bounds - constraint_values(xv)
                if np.any(uu <= 0):
                    return np.inf
                sign, logdet = np.linalg.slogdet(xv)
                if np.any(sign.real <= 0):
                    return np.inf
                return t * sv - np.log(uu).sum() - logdet.sum()

            f0 = objective(s, x)
            slope = grad_s * ds + dot(grad_x, dx)
            while alpha > 1e-14:
                if objective(s + alpha * ds, x + alpha * dx) \
                        <= f0 + 0.01 * alpha * slope:
                    break
                alpha *= 0.5
            if alpha <= 1e-14:
                break
            s += alpha * ds
            x = x + alpha * dx
        trace.append((t, s))
        if s - nu / t > tol:
            return FeasibilityResult("infeasible", slack=s, newton_steps=steps,
                                     trace=trace)
        if nu / t < tol and s > 0:
            return FeasibilityResult("infeasible", slack=s, newton_steps=steps,
                                     trace=trace)
        t *= t_factor
        if t > 1e16:
            break
    status = "infeasible" if s - nu / t > tol else "undecided"
    return FeasibilityResult(status, slack=s, newton_steps=steps, trace=trace)
