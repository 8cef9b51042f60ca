"""Solve a small nonconvex QCQP and compare with the SCP baseline.

Run with ``python3 demos/01_quickstart.py``.
"""

import numpy as np

from lalopt import QCQP, BacktrackingBeta, SolverConfig, solve, stationarity
from lalopt.bench import GeneratorSpec, gen_qcqp
from lalopt.scp import ScpConfig, scp_solve

# A two-variable warm-up: minimise 3 x1 + 4 x2 on the unit circle.
# The minimiser is -(3, 4)/5 with multiplier 5/2.
sphere = QCQP(np.zeros((2, 2)), [3.0, 4.0], 0.0, [(2.0 * np.eye(2), [0.0, 0.0], -1.0)])

# With rho = 1e3 the linearized constraint is almost enforced exactly, so
# a small constant beta behaves like undamped SCP and can cycle. Backtracking
# on beta enlarges the proximal weight until the step is safe.
cfg = SolverConfig(beta_policy=BacktrackingBeta(), eps1=1e-12, eps2=1e-12, eps_stat=1e-9)
rep = solve(sphere, [0.0, -1.0], config=cfg)
print("sphere:", rep.status, "after", rep.iterations, "iterations")
print("  x   =", rep.x, " lam =", rep.lam)
print("  betas used:", sorted({round(r.beta, 3) for r in rep.trace[1:]}))

# A seeded random instance: Q positive definite, indefinite constraint curvature,
# x0 feasible by construction.
prob, x0 = gen_qcqp(GeneratorSpec(n=20, m=13, seed=3))
lal = solve(prob, x0)
scp = scp_solve(prob, x0, ScpConfig())
for name, r in (("LAL", lal), ("SCP", scp)):
    res = stationarity(prob, r.x, r.lam)
    print(f"{name}: {r.status:>9}  iters={r.iterations:4d}  f={prob.eval_f(r.x):+.6f}  "
          f"||F||={res.feas_norm:.1e}  ||grad L||={res.grad_lag_norm:.1e}")
