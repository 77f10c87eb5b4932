"""Convergence orders and iteration counts over a small degree x level grid.

Run with ``python demos/convergence_study.py [out.csv]``.  Each row is one
solve to a relative residual of 1e-8.  The errors should fall by about
2^(k+1) per level while the GMRES count stays nearly flat.
"""
import sys

from stokes_mg.harness import observed_orders, run_convergence_study

DIM = 2
DEGREES = [1, 2, 3]
LEVELS = [2, 3, 4, 5]

out = sys.argv[1] if len(sys.argv) > 1 else None
rows, _ = run_convergence_study(DIM, DEGREES, LEVELS, csv_path=out)

print(f"{'k':>2} {'L':>2} {'dofs':>8} {'its':>4} {'nu':>6} {'err_u':>10} {'err_p':>10}")
for r in rows:
    print(f"{r['degree']:>2} {r['level']:>2} {r['dofs']:>8} {r['iterations']:>4} {r['nu']:>6.2f} "
          f"{r['err_u']:>10.3e} {r['err_p']:>10.3e}")

print()
for k in DEGREES:
    sub = [r for r in rows if r["degree"] == k]
    ou = " ".join(f"{o:.2f}" for o in observed_orders(sub, "err_u"))
    op = " ".join(f"{o:.2f}" for o in observed_orders(sub, "err_p"))
    print(f"k={k}: velocity orders {ou} | pressure orders {op} (optimal: {k + 1})")
if out:
    print(f"table written to {out}")
