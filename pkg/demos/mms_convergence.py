"""Manufactured-solution refinement study on the periodic channel.

    python3 demos/mms_convergence.py [16 32 64]

Prints L2 errors at t = 0.1 with dt = 2 h^2 and the observed orders.
"""

import sys

from nsflab import FluidParams
from nsflab.mms import channel_family, make_grid, mms_source, spatial_study

counts = [int(a) for a in sys.argv[1:]] or [16, 32, 64]
ms, setup = channel_family()
fs = mms_source(ms, FluidParams(**setup["params"]), make_grid(setup, counts[0]))
rows = spatial_study(fs, setup, counts, t_end=0.1, dt_coeff=2.0)

print(f"{'n':>5} {'dt':>10} {'err_rho':>10} {'err_theta':>10} {'err_u':>10}   orders (rho, theta, u)")
for r in rows:
    orders = ", ".join(f"{r.orders[k]:.2f}" for k in ("rho", "theta", "u")) if r.orders else ""
    print(f"{r.n:5d} {r.dt:10.3e} {r.errors['rho']:10.3e} {r.errors['theta']:10.3e} {r.errors['u']:10.3e}   {orders}")
