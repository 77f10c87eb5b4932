"""Matrix-free geometric multigrid for the Stokes equations with RT_k x Q_k elements.

The velocity lives in the H(div)-conforming Raviart-Thomas space with an
interior penalty treatment of the tangential jumps, the pressure in the
discontinuous Q_k space.  The solver is flexible GMRES preconditioned by a
V-cycle whose smoother is a colored multiplicative vertex-patch Schwarz
method; patch problems are solved by fast diagonalization plus a Schur
complement CG, or by a dense pseudo-inverse for reference.

Typical use::

    from stokes_mg import StokesSolver, manufactured_fields, assemble_rhs
    solver = StokesSolver(dim=2, degree=2, level=4)
    b = assemble_rhs(solver.layout, manufactured_fields(2))
    x, report = solver.solve(b)
"""
from .harness import (ManufacturedSolution, assemble_rhs, l2_error, manufactured_fields,
                      run_convergence_study, run_solve)
from .mesh import build_hierarchy, color_patches, enumerate_patches
from .multigrid import build_multigrid
from .operator import apply_stokes, make_context
from .solver import ConvergenceError, SolveReport, StokesSolver, fgmres, fractional_count
from .space import BlockVector, DoFLayout, build_layout

__version__ = "0.1.0"

__all__ = ["ManufacturedSolution", "assemble_rhs", "l2_error", "manufactured_fields",
           "run_convergence_study", "run_solve", "build_hierarchy", "color_patches",
           "enumerate_patches", "build_multigrid", "apply_stokes", "make_context",
           "ConvergenceError", "SolveReport", "StokesSolver", "fgmres", "fractional_count",
           "BlockVector", "DoFLayout", "build_layout"]
