"""Krylov solvers, iteration metrics and the double/mixed precision driver.

The outer solver is flexible GMRES with right preconditioning, so the
residual tested against the tolerance is the true residual of the system.
In mixed mode the GMRES vectors and the outer operator products stay in
double precision while the whole V-cycle runs in single precision; vectors
are converted when entering and leaving the cycle.
"""
from dataclasses import dataclass, field, asdict
import math
import time

import numpy as np

from .multigrid import build_multigrid
from .operator import apply_stokes
from .space import BlockVector, project_zero_mean

__all__ = ["SolveReport", "ConvergenceError", "fgmres", "cg", "fractional_count", "solve_mixed",
           "StokesSolver"]


class ConvergenceError(RuntimeError):
    """Iteration limit reached; ``report`` holds the history so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    nu: float = float("nan")
    converged: bool = False
    times: dict = field(default_factory=dict)
    dofs: int = 0
    dofs_per_second: float = float("nan")
    precision: str = "double"
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def relative_residual(self):
        return self.residuals[-1] / self.residuals[0] if self.residuals else float("nan")

    def to_dict(self):
        out = asdict(self)
        out["relative_residual"] = self.relative_residual
        return out


def fractional_count(history, n=None):
    """Steps needed for a 1e8 reduction at the observed mean rate.

    With ``rbar = (|r_n| / |r_0|)**(1/n)`` this is ``-8 / log10(rbar)``, so a
    reduction by exactly 1e-8 in n steps gives n.
    """
    history = list(history)
    n = len(history) - 1 if n is None else n
    if n < 1:
        raise ValueError("need at least one iteration")
    r0, rn = float(history[0]), float(history[n])
    if r0 <= 0:
        raise ValueError("initial residual must be positive")
    if rn <= 0:
        return 0.0
    log_rbar = math.log10(rn / r0) / n
    if log_rbar >= 0:
        return math.inf
    return -8.0 / log_rbar


def fgmres(apply_A, apply_P, b, rel_tol=1e-8, max_iter=100, reorth_tol=1e-10, report=None,
           raise_on_failure=True):
    """Flexible right-preconditioned GMRES without restart, starting from zero.

    `apply_A` and `apply_P` map 1D float64 arrays to arrays.  Uses modified
    Gram-Schmidt with a second pass when the new basis vector lost more than
    `reorth_tol` of orthogonality.  Returns ``(x, report)``.
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    report = report or SolveReport()
    b = np.asarray(b, dtype=np.float64)
    beta = float(np.linalg.norm(b))
    report.residuals = [beta]
    x = np.zeros_like(b)
    if beta == 0.0:
        report.converged = True
        report.nu = 0.0
        return x, report
    V = [b / beta]
    Z = []
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = beta
    j = 0
    for j in range(max_iter):
        z = np.asarray(apply_P(V[j]), dtype=np.float64)
        Z.append(z)
        w = np.asarray(apply_A(z), dtype=np.float64).copy()
        norm_before = np.linalg.norm(w)
        for i in range(j + 1):
            H[i, j] = np.dot(V[i], w)
            w -= H[i, j] * V[i]
        norm_after = np.linalg.norm(w)
        if norm_after < (1.0 - reorth_tol) * norm_before or norm_after < 1e-8 * norm_before:
            for i in range(j + 1):
                corr = np.dot(V[i], w)
                H[i, j] += corr
                w -= corr * V[i]
            norm_after = np.linalg.norm(w)
        H[j + 1, j] = norm_after
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = math.hypot(H[j, j], H[j + 1, j])
        cs[j], sn[j] = (1.0, 0.0) if denom == 0 else (H[j, j] / denom, H[j + 1, j] / denom)
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        report.residuals.append(abs(g[j + 1]))
        if abs(g[j + 1]) <= rel_tol * beta or norm_after == 0.0:
            report.converged = True
            break
        V.append(w / norm_after)
    n = j + 1
    y = np.linalg.solve(np.triu(H[:n, :n]), g[:n]) if n else np.zeros(0)
    for i in range(n):
        x += y[i] * Z[i]
    report.iterations = n
    report.nu = fractional_count(report.residuals, n)
    if not report.converged and raise_on_failure:
        raise ConvergenceError(f"FGMRES did not reach {rel_tol:g} in {max_iter} iterations", report)
    return x, report


def cg(apply_S, rhs, rel_tol=1e-12, max_iter=100, projector=None, precondition=None):
    """(Preconditioned) conjugate gradients on the range of `projector`.

    The projector is applied to the right-hand side, to every residual and
    to the final iterate.  Returns ``(x, iterations, converged)``.
    """
    proj = projector or (lambda v: v)
    prec = precondition or (lambda v: v.copy())
    r = proj(np.asarray(rhs, dtype=np.result_type(rhs, np.float32)).copy())
    x = np.zeros_like(r)
    r0 = np.linalg.norm(r)
    if r0 == 0:
        return x, 0, True
    z = proj(prec(r))
    p = z.copy()
    rz = np.dot(r, z)
    for it in range(1, max_iter + 1):
        q = proj(apply_S(p))
        alpha = rz / np.dot(p, q)
        x += alpha * p
        r -= alpha * q
        if np.linalg.norm(r) <= rel_tol * r0:
            return proj(x), it, True
        z = proj(prec(r))
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return proj(x), max_iter, False


class StokesSolver:
    """FGMRES preconditioned by one multigrid V-cycle, in double or mixed precision."""

    def __init__(self, dim, degree, level, local="schur", precision="double", scheme="parity",
                 cg_tol=1e-12, cg_max_iter=100, kernel="collapsed"):
        if precision not in ("double", "mixed"):
            raise ValueError(f"unknown precision {precision!r}")
        t = time.perf_counter()
        self.mg64 = build_multigrid(dim, degree, level, local, np.float64, scheme, cg_tol,
                                    cg_max_iter, kernel)
        self.mg = self.mg64 if precision == "double" else self.mg64.astype(np.float32)
        self.setup_time = time.perf_counter() - t
        self.precision = precision
        self.layout = self.mg64.fine_layout
        self.ctx = self.mg64.contexts[-1]
        self.config = dict(dim=dim, degree=degree, level=level, local_solver=local,
                           precision=precision, coloring=scheme, cg_tol=cg_tol,
                           cg_max_iter=cg_max_iter, kernel=kernel)

    def apply_A(self, data):
        return apply_stokes(self.ctx, BlockVector(self.layout, data)).data

    def apply_P(self, data):
        dtype = self.mg.dtype
        b = BlockVector(self.layout, data.astype(dtype, copy=False))
        return self.mg.v_cycle(b).data.astype(np.float64, copy=False)

    def solve(self, b, rel_tol=1e-8, max_iter=100):
        """Solve A x = b (BlockVector); returns (x, report) with zero-mean pressure."""
        report = SolveReport(precision=self.precision, config=dict(self.config, tol=rel_tol))
        report.dofs = self.layout.n_free
        t = time.perf_counter()
        xdata, report = fgmres(self.apply_A, self.apply_P, b.data, rel_tol, max_iter, report=report,
                               raise_on_failure=False)
        elapsed = time.perf_counter() - t
        x = BlockVector(self.layout, xdata)
        x.p[...] = project_zero_mean(self.layout, x.p)
        stats = self.mg.stats
        report.times = dict(setup=self.setup_time, solve=elapsed, smooth=stats.time_smooth,
                            transfer=stats.time_transfer, coarse=stats.time_coarse,
                            residual=stats.time_residual)
        report.dofs_per_second = report.dofs * max(report.iterations, 1) / elapsed if elapsed > 0 else float("nan")
        mean_cg, max_cg = self.mg.cg_statistics()
        report.extra.update(mean_cg_iterations=mean_cg, max_cg_iterations=max_cg)
        if not report.converged:
            raise ConvergenceError(f"FGMRES did not reach {rel_tol:g} in {max_iter} iterations", report)
        return x, report


def solve_mixed(b, dim, degree, level, precision="double", **kwargs):
    """Build the solver for the given level and solve; returns (x, report)."""
    rel_tol = kwargs.pop("rel_tol", 1e-8)
    solver = StokesSolver(dim, degree, level, precision=precision, **kwargs)
    return solver.solve(b, rel_tol)
