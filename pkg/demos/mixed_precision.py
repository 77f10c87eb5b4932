"""Double versus mixed precision on a small 3D problem.

Run with ``python demos/mixed_precision.py``.  In mixed mode the whole
V-cycle runs in float32 while FGMRES and the outer residual stay in float64,
so the final accuracy is that of the double run; only the preconditioner is
cheaper and slightly less exact.
"""
from stokes_mg.harness import run_solve

DIM, DEGREE, LEVEL = 3, 2, 2

for precision in ("double", "mixed"):
    _, rep = run_solve(DIM, DEGREE, LEVEL, precision=precision)
    print(f"{precision:>6}: its {rep.iterations}, nu {rep.nu:.2f}, err_u {rep.extra['err_u']:.4e}, "
          f"err_p {rep.extra['err_p']:.4e}, solve {rep.times['solve']:.2f}s")
