"""
Reducing physical material data to the dimensionless triple
===========================================================

The solver works with a rescaled system in which the shear modulus is gone
and only (lambda, rp_inv, alpha_p) remain, together with the derived
weights rho and gamma.  This script shows the map, its field scaling, and
the round trip back to physical scale.
"""

import numpy as np

from biotfem import PhysicalParams, reduce

phys = PhysicalParams(mu=0.8, lam=4.0, alpha=1.4, K=1e-4, tau=0.05,
                      c_pp=0.2)
red, scaling = reduce(phys)

print("physical:", phys)
print(f"reduced:  lambda = {red.lam:.6g}, rp_inv = {red.rp_inv:.6g}, "
      f"alpha_p = {red.alpha_p:.6g}")
print(f"derived:  rho = {red.rho:.6g}, gamma = {red.gamma:.6g}")
print(f"scaling:  u x {scaling.u_scale:.6g}, v x {scaling.v_scale:.6g}, "
      f"p x {scaling.p_scale:.6g}")

rng = np.random.default_rng(7)
u = rng.standard_normal(5)
u_back = scaling.to_physical(u=scaling.to_reduced(u=u))
print("round-trip error on a random displacement field:",
      np.abs(u - u_back).max())

# near-incompressible material: lambda_red = nu/(1-2 nu) grows with the
# Poisson ratio; below nu = 1/3 it drops under one and is rejected
from biotfem import RangeViolation

for nu in (0.3, 0.35, 0.4, 0.49, 0.499):
    E = 1.0
    mu = E / (2 * (1 + nu))
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    try:
        r, _ = reduce(PhysicalParams(mu=mu, lam=lam, alpha=1, K=1e-6,
                                     tau=1e-2))
        print(f"nu = {nu}: lambda_red = {r.lam:10.2f}, "
              f"rp_inv = {r.rp_inv:.3g}")
    except RangeViolation as exc:
        print(f"nu = {nu}: rejected ({exc})")
