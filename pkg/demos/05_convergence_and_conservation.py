"""
Convergence orders and exact local mass balance
===============================================

Solves the manufactured problem on a mesh sequence for a benign and an
extreme coefficient triple.  All three weighted error norms converge at
first order with coefficient-independent rates, and every direct solve
balances mass cell by cell at solver roundoff.
"""

import numpy as np

from biotfem import (FormOperators, ReducedParams, conservation_audit,
                     convergence_study, structured_mesh)
from biotfem.analysis import solve_manufactured

for pt in ((1.0, 1.0, 0.0), (1e8, 1e-8, 1.0)):
    params = ReducedParams(*pt)
    table = convergence_study(params, [4, 8, 16])
    print(f"\nlambda={pt[0]:g}, rp_inv={pt[1]:g}, alpha_p={pt[2]:g}:")
    print(f"{'n':>4} {'err_U':>12} {'err_V':>12} {'err_P':>12} "
          f"{'ord_U':>7} {'ord_V':>7} {'ord_P':>7} {'quasi':>7}")
    for row in table.rows:
        o = [f"{v:7.3f}" if v is not None else "      -"
             for v in (row.order_U, row.order_V, row.order_P)]
        print(f"{row.n:4d} {row.err_U:12.4e} {row.err_V:12.4e} "
              f"{row.err_P:12.4e} {o[0]} {o[1]} {o[2]} "
              f"{row.quasi_ratio:7.3f}")

print("\nper-cell mass balance after a direct solve (n=8):")
ops = FormOperators(structured_mesh(8), ("bdm1", "rt0", "p0"))
for pt in ((1.0, 1.0, 0.0), (1e8, 1e-8, 1.0), (1e2, 1e4, 1.0)):
    params = ReducedParams(*pt)
    system, x, mult, _ = solve_manufactured(ops, params)
    r = conservation_audit(system, x)
    print(f"  {pt}: max |residual| = {np.abs(r).max():.3e} "
          f"(multiplier {mult:+.1e})")
