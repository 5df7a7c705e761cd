"""
Block-diagonal preconditioning across sixteen decades of coefficients
=====================================================================

Runs MINRES with exact block inverses (elasticity block, weighted flux
norm, scaled pressure mass) on the manufactured problem and tabulates
iteration counts and spectral condition numbers of the preconditioned
operator.  Counts stay within a factor two of the unit-coefficient
reference; corners where the preconditioner is nearly exact converge in a
handful of steps.
"""

from biotfem import (FormOperators, ReducedParams, build_preconditioner,
                     estimate_condition, manufactured_case, minres_solve,
                     structured_mesh)

ops = FormOperators(structured_mesh(8), ("bdm1", "rt0", "p0"))
ops2 = FormOperators(structured_mesh(2), ("bdm1", "rt0", "p0"))

print(f"{'lambda':>10} {'rp_inv':>10} {'alpha_p':>8} {'iters':>6} "
      f"{'kappa(n=2)':>11}")
for lam in (1.0, 1e4, 1e8):
    for rp in (1e-8, 1.0, 1e8):
        for ap in (0.0, 1.0):
            pr = ReducedParams(lam, rp, ap)
            case = manufactured_case(pr)
            system = ops.block_system(pr, f=case.f, g=case.g)
            precond = build_preconditioner(ops.norm_blocks(pr), system)
            x, report = minres_solve(system, precond, tol=1e-8)
            sys2 = ops2.block_system(pr)
            pre2 = build_preconditioner(ops2.norm_blocks(pr), sys2)
            kappa = estimate_condition(sys2, pre2)
            flag = "" if report.converged else "  (NOT CONVERGED)"
            print(f"{lam:10.0e} {rp:10.0e} {ap:8.1f} "
                  f"{report.iterations:6d} {kappa:11.3f}{flag}")

print("\nresidual history of the unit-coefficient run:")
pr = ReducedParams(1.0, 1.0, 0.0)
case = manufactured_case(pr)
system = ops.block_system(pr, f=case.f, g=case.g)
precond = build_preconditioner(ops.norm_blocks(pr), system)
_, report = minres_solve(system, precond, tol=1e-8)
for i, r in enumerate(report.residual_history):
    if i % 4 == 0 or i == report.iterations:
        print(f"  iter {i:3d}: {r:.3e}")
