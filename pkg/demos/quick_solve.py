"""Solve the manufactured 2D Stokes problem once and look at what came out.

Run with ``python demos/quick_solve.py``.  The solver is FGMRES with one
multigrid V-cycle as preconditioner; the V-cycle smooths with vertex-patch
Schwarz solves in which every patch is handled by fast diagonalization plus
a Schur-complement CG for the pressure.
"""
import numpy as np

from stokes_mg.harness import run_solve

DIM, DEGREE, LEVEL = 2, 2, 4

x, report = run_solve(DIM, DEGREE, LEVEL)

print(f"RT_{DEGREE} x Q_{DEGREE} on a {2 ** (LEVEL + 1)}^{DIM} mesh: {report.dofs} unknowns")
print(f"GMRES steps: {report.iterations}, fractional count nu = {report.nu:.2f}")
print("residual history:", " ".join(f"{r / report.residuals[0]:.1e}" for r in report.residuals))
print(f"velocity L2 error {report.extra['err_u']:.3e}, pressure L2 error {report.extra['err_p']:.3e}")

# The velocity lies in H(div) and its divergence lies in the pressure space,
# so the discrete solution is divergence free up to the solver tolerance.
print(f"||div u_h|| / ||u_h|| = {report.extra['div_ratio']:.1e}")

# The pressure is fixed by a zero mean.
print(f"pressure coefficient range [{x.p.min():.3f}, {x.p.max():.3f}]")
print(f"mean Schur CG iterations per patch solve: {report.extra['mean_cg_iterations']:.1f}")
print("time split (s):", {k: round(v, 2) for k, v in report.times.items()})
assert np.isfinite(report.nu)
