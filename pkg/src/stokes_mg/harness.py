"""Manufactured Stokes problems, error measurement and experiment drivers.

The reference velocity is the curl of a stream function built from the
bump ``phi(x) = x^2 (x-1)^2 / sqrt(2 pi sigma^2) * exp(-(x-mu)^2 / sigma^2)``,
so it is divergence free and vanishes on the boundary; the pressure is a
product of cosines with zero mean.  All derivatives are closed-form.
"""
from dataclasses import dataclass
import csv
import json
import math
import statistics
import time

import numpy as np

from .fem1d import gauss_lobatto_points, gauss_quadrature, velocity_bases
from .operator import apply_stokes, sum_factor_contract
from .space import BlockVector, gather_cells, scatter_add_cells
from .solver import ConvergenceError, StokesSolver

__all__ = ["ManufacturedSolution", "manufactured_fields", "assemble_rhs", "interpolate",
           "l2_error", "divergence_norm", "velocity_norm", "run_solve", "run_convergence_study",
           "compare_local_solvers", "perf_report", "observed_orders", "write_csv", "read_csv",
           "write_json", "CSV_COLUMNS"]

CSV_COLUMNS = ["dim", "degree", "level", "dofs", "iterations", "nu", "err_u", "err_p",
               "time_total_s", "dofs_per_s", "precision", "local_solver"]


def _phi_derivatives(x, sigma, mu):
    """phi, phi', phi'', phi''' at x (closed form via the Leibniz rule)."""
    x = np.asarray(x, dtype=float)
    c = math.sqrt(2.0 * math.pi * sigma ** 2)
    g = [x ** 2 * (x - 1) ** 2 / c,
         2 * x * (x - 1) * (2 * x - 1) / c,
         (12 * x ** 2 - 12 * x + 2) / c,
         (24 * x - 12) / c]
    s = x - mu
    e0 = np.exp(-s ** 2 / sigma ** 2)
    e = [e0,
         -2 * s / sigma ** 2 * e0,
         (4 * s ** 2 / sigma ** 4 - 2 / sigma ** 2) * e0,
         (-8 * s ** 3 / sigma ** 6 + 12 * s / sigma ** 4) * e0]
    binom = [[1], [1, 1], [1, 2, 1], [1, 3, 3, 1]]
    return [sum(binom[n][j] * g[j] * e[n - j] for j in range(n + 1)) for n in range(4)]


@dataclass(frozen=True)
class ManufacturedSolution:
    """Reference (u, p) and forcing f = -lap u + grad p on the unit square or cube."""

    dim: int
    sigma: float = 0.1
    mu: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")

    @property
    def velocity_terms(self):
        """u_c as a list of (coefficient, derivative multi-index of psi)."""
        if self.dim == 2:
            return [[(1.0, (0, 1))], [(-1.0, (1, 0))]]
        return [[(1.0, (0, 1, 0)), (1.0, (0, 0, 1))],
                [(-1.0, (1, 0, 0)), (-1.0, (0, 0, 1))],
                [(-1.0, (1, 0, 0)), (1.0, (0, 1, 0))]]

    def _tables(self, axes):
        return [_phi_derivatives(a, self.sigma, self.mu) for a in axes]

    @staticmethod
    def _outer(factors):
        out = factors[0]
        for f in factors[1:]:
            out = np.multiply.outer(out, f)
        return out

    def _psi(self, tables, alpha):
        return self._outer([tables[i][n] for i, n in enumerate(alpha)])

    def velocity(self, axes):
        """u on the tensor grid ``axes`` (one 1D coordinate array per direction)."""
        t = self._tables(axes)
        return [sum(coef * self._psi(t, a) for coef, a in terms) for terms in self.velocity_terms]

    def velocity_gradient(self, axes):
        """grad[c][j] = d u_c / d x_j."""
        t = self._tables(axes)
        out = []
        for terms in self.velocity_terms:
            row = []
            for j in range(self.dim):
                row.append(sum(coef * self._psi(t, _bump(a, j, 1)) for coef, a in terms))
            out.append(row)
        return out

    def velocity_laplacian(self, axes):
        t = self._tables(axes)
        return [sum(coef * self._psi(t, _bump(a, j, 2)) for coef, a in terms for j in range(self.dim))
                for terms in self.velocity_terms]

    def pressure(self, axes):
        return self._outer([np.cos(2 * np.pi * np.asarray(a, float)) for a in axes])

    def pressure_gradient(self, axes):
        cos = [np.cos(2 * np.pi * np.asarray(a, float)) for a in axes]
        sin = [-2 * np.pi * np.sin(2 * np.pi * np.asarray(a, float)) for a in axes]
        return [self._outer([sin[i] if i == j else cos[i] for i in range(self.dim)])
                for j in range(self.dim)]

    def forcing(self, axes):
        lap = self.velocity_laplacian(axes)
        gp = self.pressure_gradient(axes)
        return [-lap[c] + gp[c] for c in range(self.dim)]

    def divergence(self, axes):
        g = self.velocity_gradient(axes)
        return sum(g[c][c] for c in range(self.dim))


def _bump(alpha, j, n):
    out = list(alpha)
    out[j] += n
    return tuple(out)


def manufactured_fields(dim, sigma=0.1, mu=0.5):
    return ManufacturedSolution(dim, sigma, mu)


# ----------------------------------------------------------------------------
# quadrature on all cells


def _cell_quadrature(layout, nq, e_range=None):
    """1D points (global coordinates, per axis) and weights for all cells (last axis limited to e_range)."""
    m, h = layout.cells, 1.0 / layout.cells
    q = gauss_quadrature(nq)
    axes = []
    for i in range(layout.dim):
        cells = np.arange(m) if (e_range is None or i < layout.dim - 1) else np.arange(*e_range)
        axes.append((cells[:, None] * h + h * q.points[None, :]).ravel())
    return axes, q.weights * h


def _grid_to_cells(values, d, nq):
    """(e_1 q_1, ..., e_d q_d) grid array -> (q_1..q_d, e_1..e_d) cell tensor."""
    shape = []
    for n in values.shape:
        shape += [n // nq, nq]
    v = values.reshape(shape)
    perm = [2 * i + 1 for i in range(d)] + [2 * i for i in range(d)]
    return v.transpose(perm)


def _chunks(layout, max_points=2_000_000, nq=None):
    """Ranges of cells along the last axis keeping each evaluation slab small."""
    m, d = layout.cells, layout.dim
    nq = nq or layout.degree + 3
    per_slab = (m * nq) ** (d - 1) * nq
    step = max(1, max_points // per_slab)
    return [(lo, min(lo + step, m)) for lo in range(0, m, step)]


def _basis_tables(layout, nq):
    par, orth = velocity_bases(layout.degree)
    q = gauss_quadrature(nq)
    return {"par": (par.values(q.points).T, par.derivatives(q.points).T),
            "orth": (orth.values(q.points).T, orth.derivatives(q.points).T)}


def _cells_slice(arr, d, e_range):
    idx = [slice(None)] * arr.ndim
    idx[2 * d - 1] = slice(*e_range)
    return arr[tuple(idx)]


def assemble_rhs(layout, ms, nq=None):
    """Load vector (f, v_i) for the velocity; the pressure block stays zero.

    Boundary data are zero, so there are no Nitsche lift terms.
    """
    d, k = layout.dim, layout.degree
    nq = nq or k + 3
    tables = _basis_tables(layout, nq)
    b = BlockVector.zeros(layout)
    for c in range(d):
        cell_vals = []
        for e_range in _chunks(layout, nq=nq):
            axes, w = _cell_quadrature(layout, nq, e_range)
            f = ms.forcing(axes)[c]
            fc = _grid_to_cells(f, d, nq)
            wq = w
            for _ in range(d - 1):
                wq = np.multiply.outer(wq, w)
            wq = wq.reshape(wq.shape + (1,) * d)
            vals = fc * wq
            for i in range(d):
                v = tables["par" if i == c else "orth"][0]
                vals = sum_factor_contract(vals, np.ascontiguousarray(v.T), i)
            cell_vals.append(vals)
        local = np.concatenate(cell_vals, axis=2 * d - 1)
        scatter_add_cells(layout, np.ascontiguousarray(local), b, c)
    return b


def interpolate(layout, ms):
    """Nodal interpolant of (u, p): values at the Gauss-Lobatto nodes of every block."""
    k, m, d = layout.degree, layout.cells, layout.dim
    h = 1.0 / m

    def coords(n_nodes, shared):
        xi = gauss_lobatto_points(n_nodes)
        if shared:
            j = np.arange(m * (n_nodes - 1) + 1)
            e, a = np.minimum(j // (n_nodes - 1), m - 1), j - np.minimum(j // (n_nodes - 1), m - 1) * (n_nodes - 1)
        else:
            j = np.arange(m * n_nodes)
            e, a = j // n_nodes, j % n_nodes
        return e * h + xi[a] * h

    x = BlockVector.zeros(layout)
    par, orth = coords(k + 2, True), coords(k + 1, False)
    for c in range(d):
        axes = [par if i == c else orth for i in range(d)]
        x.block(c)[...] = ms.velocity(axes)[c]
    x.p[...] = ms.pressure([orth] * d)
    for c in range(d):
        for end in (0, -1):
            idx = [slice(None)] * d
            idx[c] = end
            x.block(c)[tuple(idx)] = 0.0
    return x


def _values_at_quadrature(layout, local, c, tables, e_range, derivative_axis=None):
    d = layout.dim
    h = 1.0 / layout.cells
    vals = _cells_slice(local, d, e_range)
    for i in range(d):
        name = "par" if i == c else "orth"
        mat = tables[name][1] / h if i == derivative_axis else tables[name][0]
        vals = sum_factor_contract(vals, mat, i)
    return vals


def _weights(w, d):
    wq = w
    for _ in range(d - 1):
        wq = np.multiply.outer(wq, w)
    return wq.reshape(wq.shape + (1,) * d)


def l2_error(layout, x, ms, nq=None):
    """(||u_h - u||, ||p_h - mean(p_h) - p||) by cell quadrature with k+3 points."""
    d, k = layout.dim, layout.degree
    nq = nq or k + 3
    tables = _basis_tables(layout, nq)
    us = [gather_cells(layout, x, c) for c in range(d)]
    p = gather_cells(layout, x, d)
    err_u = 0.0
    p_int = 0.0
    p_sq = 0.0
    p_cross = 0.0
    p_exact_int = 0.0
    for e_range in _chunks(layout, nq=nq):
        axes, w = _cell_quadrature(layout, nq, e_range)
        wq = _weights(w, d)
        exact = ms.velocity(axes)
        for c in range(d):
            diff = _values_at_quadrature(layout, us[c], c, tables, e_range) - _grid_to_cells(exact[c], d, nq)
            err_u += float(np.sum(diff ** 2 * wq))
        ph = _values_at_quadrature(layout, p, d, tables, e_range)
        pe = _grid_to_cells(ms.pressure(axes), d, nq)
        diff = ph - pe
        p_sq += float(np.sum(diff ** 2 * wq))
        p_int += float(np.sum(ph * wq))
        p_exact_int += float(np.sum(pe * wq))
        p_cross += float(np.sum(diff * wq))
    # || (p_h - pbar_h) - p ||^2 = ||p_h - p||^2 - 2 pbar_h int(p_h - p) + pbar_h^2
    pbar = p_int
    err_p_sq = p_sq - 2.0 * pbar * p_cross + pbar ** 2
    return math.sqrt(err_u), math.sqrt(max(err_p_sq, 0.0))


def divergence_norm(layout, x, nq=None):
    """||div u_h||_{L2}, evaluated cell by cell (u_h is H(div)-conforming)."""
    d, k = layout.dim, layout.degree
    nq = nq or k + 2
    tables = _basis_tables(layout, nq)
    us = [gather_cells(layout, x, c) for c in range(d)]
    total = 0.0
    for e_range in _chunks(layout, nq=nq):
        _, w = _cell_quadrature(layout, nq, e_range)
        div = sum(_values_at_quadrature(layout, us[c], c, tables, e_range, derivative_axis=c)
                  for c in range(d))
        total += float(np.sum(div ** 2 * _weights(w, d)))
    return math.sqrt(total)


def velocity_norm(layout, x, nq=None):
    d, k = layout.dim, layout.degree
    nq = nq or k + 2
    tables = _basis_tables(layout, nq)
    total = 0.0
    for c in range(d):
        u = gather_cells(layout, x, c)
        for e_range in _chunks(layout, nq=nq):
            _, w = _cell_quadrature(layout, nq, e_range)
            total += float(np.sum(_values_at_quadrature(layout, u, c, tables, e_range) ** 2 * _weights(w, d)))
    return math.sqrt(total)


# ----------------------------------------------------------------------------
# drivers


def run_solve(dim, degree, level, local="schur", precision="double", tol=1e-8, sigma=0.1, mu=0.5,
              max_iter=100, **solver_options):
    """Solve the manufactured problem once; returns (x, report) with errors in ``report.extra``."""
    ms = manufactured_fields(dim, sigma, mu)
    t0 = time.perf_counter()
    solver = StokesSolver(dim, degree, level, local=local, precision=precision, **solver_options)
    layout = solver.layout
    b = assemble_rhs(layout, ms)
    x, report = solver.solve(b, tol, max_iter)
    total = time.perf_counter() - t0
    err_u, err_p = l2_error(layout, x, ms)
    div = divergence_norm(layout, x)
    unorm = velocity_norm(layout, x)
    report.times["total"] = total
    report.config.update(sigma=sigma, mu=mu)
    report.extra.update(err_u=err_u, err_p=err_p, div_u=div, norm_u=unorm,
                        div_ratio=div / unorm if unorm else float("nan"))
    return x, report


def _row(report):
    cfg = report.config
    total = report.times.get("total", float("nan"))
    return {"dim": cfg["dim"], "degree": cfg["degree"], "level": cfg["level"], "dofs": report.dofs,
            "iterations": report.iterations, "nu": report.nu,
            "err_u": report.extra.get("err_u", float("nan")),
            "err_p": report.extra.get("err_p", float("nan")),
            "time_total_s": total, "dofs_per_s": report.dofs / total if total else float("nan"),
            "precision": cfg["precision"], "local_solver": cfg["local_solver"]}


def run_convergence_study(dim, degrees, levels, local="schur", precision="double", tol=1e-8,
                          sigma=0.1, mu=0.5, csv_path=None, json_path=None, log=None, **options):
    """Solve for every (degree, level); failures become rows with NaN entries and an error note."""
    rows, reports = [], []
    for k in degrees:
        for lvl in levels:
            try:
                _, report = run_solve(dim, k, lvl, local, precision, tol, sigma, mu, **options)
                row = _row(report)
                reports.append(report.to_dict())
            except (ConvergenceError, RuntimeError, MemoryError, ValueError) as exc:
                row = {col: float("nan") for col in CSV_COLUMNS}
                row.update(dim=dim, degree=k, level=lvl, precision=precision, local_solver=local)
                reports.append({"config": row, "error": str(exc)})
            rows.append(row)
            if log:
                log(row)
    if csv_path:
        write_csv(rows, csv_path)
    if json_path:
        write_json(reports, json_path)
    return rows, reports


def compare_local_solvers(dim, degree, levels, tol=1e-8, sigma=0.1, mu=0.5, csv_path=None, log=None):
    """Fractional counts of the Schur and the direct local solver side by side."""
    rows = []
    for local in ("schur", "direct"):
        r, _ = run_convergence_study(dim, [degree], levels, local, "double", tol, sigma, mu, log=log)
        rows.extend(r)
    if csv_path:
        write_csv(rows, csv_path)
    return rows


def observed_orders(rows, key):
    """Convergence orders log2(e_l / e_{l+1}) between consecutive levels of sorted rows."""
    rows = sorted(rows, key=lambda r: r["level"])
    return [math.log2(a[key] / b[key]) for a, b in zip(rows, rows[1:])]


def perf_report(dim, degree, level, reps=3, warmup=1, local="schur"):
    """Median DoF/s for operator apply, smoothing pass (total and per color) and a full solve."""
    from .smoother import PatchSmoother, _patch_view, residual

    ms = manufactured_fields(dim)
    solver = StokesSolver(dim, degree, level, local=local)
    layout = solver.layout
    ctx = solver.ctx
    b = assemble_rhs(layout, ms)
    dofs = layout.n_free

    def timed(fn):
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(reps):
            t = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t)
        return statistics.median(samples)

    t_apply = timed(lambda: apply_stokes(ctx, b))
    smoother = PatchSmoother(ctx, local)
    x = BlockVector.zeros(layout)
    t_smooth = timed(lambda: smoother.smooth(x, b))
    per_color = []
    r = BlockVector.zeros(layout)
    for color in smoother.colors:
        def one_color(color=color):
            residual(ctx, x, b, out=r)
            k = layout.degree
            for batch in color:
                F = [np.array(_patch_view(r.block(c), k, c, batch)) for c in range(dim)]
                G = np.array(_patch_view(r.block(dim), k, dim, batch))
                smoother.solve_batch(F, G, batch)
        per_color.append(timed(one_color))
    t_solve = timed(lambda: solver.solve(b))
    return {
        "dim": dim, "degree": degree, "level": level, "dofs": dofs, "reps": reps, "warmup": warmup,
        "operator_apply": {"seconds": t_apply, "dofs_per_s": dofs / t_apply},
        "smoothing_pass": {"seconds": t_smooth, "dofs_per_s": dofs / t_smooth,
                           "per_color_seconds": per_color},
        "solve": {"seconds": t_solve, "dofs_per_s": dofs / t_solve},
    }


# ----------------------------------------------------------------------------
# output


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_csv(path):
    ints = {"dim", "degree", "level", "dofs", "iterations"}
    strs = {"precision", "local_solver"}
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, val in raw.items():
                if key in strs:
                    row[key] = val
                elif key in ints:
                    row[key] = int(float(val)) if val not in ("nan", "") and float(val) == float(val) else float("nan")
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
