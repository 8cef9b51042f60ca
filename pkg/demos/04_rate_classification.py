"""Classify the decay of a Lyapunov sequence.

``rate_fit`` looks at ``E_k = P_k - P*`` and decides between finite
termination, a geometric rate and a power law. Synthetic sequences make the
answer known in advance; a real run follows.
"""

import math

import numpy as np

from lalopt import BacktrackingBeta, ConstantBeta, InstanceConstants, SolverConfig, solve, theory
from lalopt.bench import GeneratorSpec, gen_qcqp
from lalopt.fixtures import linear_quadratic_problem

k = np.arange(1, 41, dtype=float)
for label, E in (
    ("0.5^k", 0.5**k),
    ("k^-2", k**-2.0),
    ("zero from k=7", np.concatenate([2.0 ** -k[:6], np.zeros(34)])),
):
    r = theory.rate_fit(E, p_star=0.0)
    print(f"{label:14s} -> {r.regime:10s} rate={r.rate:+.4f} nu={r.nu:.3f} R2={r.r2:.4f}")

# On a real trace P* is unknown and is taken as the last value, which biases
# the tail; the last 10% is dropped for that reason. The run below uses the
# certified penalty parameter, so P_k is monotone.
consts = InstanceConstants(M_f=2 * math.sqrt(2), L_f=1.0, M_F=1.0, L_F=0.0, sigma=1.0)
params = theory.choose_params(consts, beta_max=1.0)
rho = theory.rho_lower_bound(consts, params, D_S=2 * math.sqrt(2))
cfg = SolverConfig(rho=rho, beta_policy=ConstantBeta(1.0), constants=consts,
                   eps1=1e-300, eps2=1e-300, max_iter=20)
rep = solve(linear_quadratic_problem(), [0.0, 1.5], config=cfg)
# x2 halves every step and P - P* is quadratic in it, so expect 1/4
r = theory.rate_fit(theory.lyapunov_trace(rep.trace, rho, consts))
print(f"\ncertified run: {rep.iterations} iterations -> {r.regime}, contraction {r.rate:.4f}")

# With backtracking, gamma_k grows like beta_k^2 while the proximal condition
# pushes beta_k up, so P_k need not be monotone and the fit reports it.
prob, x0 = gen_qcqp(GeneratorSpec(20, 13, seed=1))
cfg = SolverConfig(beta_policy=BacktrackingBeta(), eps1=1e-300, eps2=1e-300, eps_stat=1e-10)
rep = solve(prob, x0, config=cfg)
k = theory.trajectory_constants(prob, rep.trace, rep.rho)
r = theory.rate_fit(theory.lyapunov_trace(rep.trace, rep.rho, k))
print(f"backtracking run: {rep.iterations} iterations -> {r.regime} ({r.diagnostic})")
