"""The Schur-complement patch solver against a dense pseudo-inverse.

Run with ``python demos/local_solver_comparison.py``.  First one patch is
solved both ways and the two answers compared; then both are used inside
the full multigrid solver, where they should give the same iteration counts.
"""
import numpy as np

from stokes_mg.harness import compare_local_solvers
from stokes_mg.local_solver import (DirectPatchSolver, build_patch_matrices, fast_diag_prepare,
                                    local_solve_direct, schur_solve)
from stokes_mg.verification import random_patch_data

DIM, DEGREE = 2, 3
rng = np.random.default_rng(0)

matrices = build_patch_matrices(1 / 16, DEGREE)
data = fast_diag_prepare(matrices, DIM, cg_tol=1e-14, cg_max_iter=200)
direct = DirectPatchSolver(matrices, DIM)
interior = (("interior", "interior"),) * DIM

F, G = random_patch_data(rng, data, (8,))
U1, P1, info = schur_solve(data, F, G, interior)
U2, P2 = local_solve_direct(direct, F, G, interior)
scale_u = max(np.abs(b).max() for b in U2)
P1, P2 = P1 - P1.mean(axis=(0, 1)), P2 - P2.mean(axis=(0, 1))
diff_u = max(np.abs(a - b).max() for a, b in zip(U1, U2)) / scale_u
diff_p = np.abs(P1 - P2).max() / np.abs(P2).max()
print(f"8 interior patches, k={DEGREE}: CG iterations {info.iterations}, "
      f"relative velocity difference {diff_u:.1e}, relative pressure difference {diff_p:.1e}")

rows = compare_local_solvers(DIM, DEGREE, [2, 3, 4])
print(f"\n{'solver':>7} {'L':>2} {'its':>4} {'nu':>6} {'time [s]':>9}")
for r in rows:
    print(f"{r['local_solver']:>7} {r['level']:>2} {r['iterations']:>4} {r['nu']:>6.2f} "
          f"{r['time_total_s']:>9.2f}")
