import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_mg.harness import (CSV_COLUMNS, ManufacturedSolution, _phi_derivatives, assemble_rhs,
                               divergence_norm, interpolate, l2_error, manufactured_fields,
                               observed_orders, perf_report, read_csv, run_convergence_study,
                               run_solve, velocity_norm, write_csv, write_json)
from stokes_mg.fem1d import gauss_quadrature
from stokes_mg.operator import apply_stokes, make_context
from stokes_mg.space import BlockVector, DoFLayout

STEP = 1e-6


def _central(f, x):
    return (f(x + STEP) - f(x - STEP)) / (2 * STEP)


@pytest.mark.parametrize("sigma,mu", [(0.1, 0.5), (0.3, 0.2), (0.05, 0.7)])
def test_phi_derivatives_match_finite_differences(sigma, mu):
    x = np.linspace(0.05, 0.95, 37)
    for n in range(3):
        fd = _central(lambda t: _phi_derivatives(t, sigma, mu)[n], x)
        exact = _phi_derivatives(x, sigma, mu)[n + 1]
        scale = np.abs(exact).max()
        assert np.abs(fd - exact).max() <= 1e-6 * scale


@pytest.mark.parametrize("dim", [2, 3])
def test_velocity_and_pressure_derivatives_match_finite_differences(dim):
    ms = manufactured_fields(dim, 0.2, 0.4)
    rng = np.random.default_rng(0)
    for _ in range(5):
        point = rng.uniform(0.1, 0.9, dim)
        axes = [np.array([v]) for v in point]
        grad = ms.velocity_gradient(axes)
        gp = ms.pressure_gradient(axes)
        for j in range(dim):
            shifted = lambda s: [a + (s if i == j else 0.0) for i, a in enumerate(axes)]  # noqa: E731
            for c in range(dim):
                fd = (ms.velocity(shifted(STEP))[c] - ms.velocity(shifted(-STEP))[c]) / (2 * STEP)
                assert fd.item() == pytest.approx(grad[c][j].item(), rel=1e-6, abs=1e-6 * np.abs(grad[c][j]).max() + 1e-9)
            fd = (ms.pressure(shifted(STEP)) - ms.pressure(shifted(-STEP))) / (2 * STEP)
            assert fd.item() == pytest.approx(gp[j].item(), rel=1e-6, abs=1e-9)
        # Laplacian from second differences of the gradient
        lap = ms.velocity_laplacian(axes)
        for c in range(dim):
            fd = 0.0
            for j in range(dim):
                shifted = lambda s: [a + (s if i == j else 0.0) for i, a in enumerate(axes)]  # noqa: E731
                fd += ((ms.velocity_gradient(shifted(STEP))[c][j] - ms.velocity_gradient(shifted(-STEP))[c][j])
                       / (2 * STEP)).item()
            assert fd == pytest.approx(lap[c].item(), rel=1e-6, abs=1e-6 * abs(lap[c].item()) + 1e-7)


@pytest.mark.parametrize("dim", [2, 3])
def test_divergence_vanishes_at_random_points(dim):
    ms = manufactured_fields(dim)
    rng = np.random.default_rng(1)
    for point in rng.uniform(0, 1, (100, dim)):
        div = ms.divergence([np.array([v]) for v in point]).item()
        assert abs(div) <= 1e-12


def test_pressure_values_and_mean():
    ms = manufactured_fields(2)
    assert ms.pressure([np.array([0.5]), np.array([0.5])]).item() == pytest.approx(1.0)
    q = gauss_quadrature(6)
    cells = 32
    x = (np.arange(cells)[:, None] + q.points[None, :]).ravel() / cells
    w = np.tile(q.weights, cells) / cells
    for dim in (2, 3):
        p = manufactured_fields(dim).pressure([x] * dim)
        total = p
        for _ in range(dim):
            total = np.tensordot(w, total, axes=(0, 0))
        assert abs(float(total)) <= 1e-10


@pytest.mark.parametrize("dim", [2, 3])
def test_velocity_vanishes_on_boundary(dim):
    ms = manufactured_fields(dim)
    grid = np.linspace(0, 1, 7)
    for i in range(dim):
        for end in (0.0, 1.0):
            axes = [grid] * dim
            axes[i] = np.array([end])
            for u in ms.velocity(axes):
                assert np.abs(u).max() < 1e-14


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ManufacturedSolution(2, sigma=0.0)
    with pytest.raises(ValueError):
        ManufacturedSolution(4)


def test_rhs_has_zero_pressure_block_and_is_consistent():
    residuals = []
    for m in (8, 16, 32):
        lay = DoFLayout(2, m, 2)
        ms = manufactured_fields(2)
        b = assemble_rhs(lay, ms)
        assert np.all(b.p == 0)
        x = interpolate(lay, ms)
        r = apply_stokes(make_context(lay), x).data - b.data
        residuals.append(np.linalg.norm(r))
    assert residuals[0] > residuals[1] > residuals[2]


def test_error_of_zero_field_is_the_norm():
    lay = DoFLayout(2, 8, 2)
    ms = manufactured_fields(2)
    err_u, err_p = l2_error(lay, BlockVector.zeros(lay), ms)
    q = gauss_quadrature(12)
    x = (np.arange(16)[:, None] + q.points[None, :]).ravel() / 16
    w = np.tile(q.weights, 16) / 16
    exact = math.sqrt(sum(float(w @ (u ** 2) @ w) for u in ms.velocity([x, x])))
    # l2_error uses k+3 points per cell, which integrates the bump only approximately
    assert err_u == pytest.approx(exact, rel=1e-4)
    assert err_p == pytest.approx(0.5, rel=1e-8)  # ||cos(2 pi x) cos(2 pi y)|| = 1/2


@pytest.mark.parametrize("k", [1, 2])
def test_interpolant_converges_at_optimal_order(k):
    errs = []
    for m in (8, 16, 32):
        lay = DoFLayout(2, m, k)
        ms = manufactured_fields(2)
        errs.append(l2_error(lay, interpolate(lay, ms), ms))
    orders_u = [math.log2(a[0] / b[0]) for a, b in zip(errs, errs[1:])]
    orders_p = [math.log2(a[1] / b[1]) for a, b in zip(errs, errs[1:])]
    assert orders_u[-1] > k + 0.7 and orders_p[-1] > k + 0.7


def test_solution_error_close_to_interpolation_error():
    lay_level = 3
    x, report = run_solve(2, 2, lay_level)
    lay = x.layout
    ms = manufactured_fields(2)
    err_i = l2_error(lay, interpolate(lay, ms), ms)
    assert report.extra["err_u"] < 3 * err_i[0]
    assert report.extra["div_ratio"] <= 1e-6
    assert divergence_norm(lay, x) == pytest.approx(report.extra["div_u"])


def test_observed_orders():
    rows = [{"level": 4, "e": 0.25}, {"level": 3, "e": 1.0}, {"level": 5, "e": 0.03125}]
    assert observed_orders(rows, "e") == pytest.approx([2.0, 3.0])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.floats(allow_nan=False, allow_infinity=False),
                          st.floats(1e-300, 1e300)), min_size=1, max_size=5))
def test_csv_round_trip(tmp_path_factory, entries):
    rows = []
    for k, nu, err in entries:
        rows.append(dict(dim=2, degree=k, level=3, dofs=100 * k, iterations=k + 1, nu=nu, err_u=err,
                         err_p=err / 3, time_total_s=0.1, dofs_per_s=1e6, precision="double",
                         local_solver="schur"))
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(rows, path)
    assert read_csv(path) == rows
    with open(path) as fh:
        assert fh.readline().strip().split(",") == CSV_COLUMNS


def test_study_records_failures_and_writes_outputs(tmp_path):
    import json
    rows, reports = run_convergence_study(2, [1], [1, 2], tol=1e-8, max_iter=2,
                                          csv_path=tmp_path / "a.csv", json_path=tmp_path / "a.json")
    assert len(rows) == 2 and all(math.isnan(r["nu"]) for r in rows)
    assert all("error" in r for r in reports)
    rows, reports = run_convergence_study(2, [1], [1, 2], csv_path=tmp_path / "b.csv",
                                          json_path=tmp_path / "b.json")
    assert all(np.isfinite(r["nu"]) for r in rows)
    assert read_csv(tmp_path / "b.csv") == rows
    loaded = json.loads((tmp_path / "b.json").read_text())
    assert [r["iterations"] for r in loaded] == [r["iterations"] for r in rows]
    write_json({"a": np.float32(1.5), "b": np.arange(2)}, tmp_path / "c.json")
    assert json.loads((tmp_path / "c.json").read_text()) == {"a": 1.5, "b": [0, 1]}


def test_perf_report_structure():
    reports = {k: perf_report(2, k, 3, reps=3, warmup=1) for k in (1, 2, 3, 4)}
    for k, rep in reports.items():
        assert rep["operator_apply"]["dofs_per_s"] == pytest.approx(
            rep["dofs"] / rep["operator_apply"]["seconds"])
        assert len(rep["smoothing_pass"]["per_color_seconds"]) == 4
        # smoothing costs more per DoF than one operator application
        assert rep["smoothing_pass"]["seconds"] > rep["operator_apply"]["seconds"]
    per_dof = {k: r["operator_apply"]["seconds"] / r["dofs"] for k, r in reports.items()}
    # at most linear growth in k+1, with a factor 2 slack
    for k in (2, 3, 4):
        assert per_dof[k] / per_dof[1] <= 2 * (k + 1) / 2
