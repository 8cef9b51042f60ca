"""Check the convergence inequalities along a solver trace.

Two things are shown. First, every trace check on a random QCQP with
constants measured over the visited iterates. Second, a run whose penalty
parameter is the theoretical lower bound, where the Lyapunov sequence is
monotone.
"""

import math

from lalopt import BacktrackingBeta, ConstantBeta, InstanceConstants, SolverConfig, solve, theory
from lalopt.bench import GeneratorSpec, gen_qcqp
from lalopt.fixtures import linear_quadratic_problem

prob, x0 = gen_qcqp(GeneratorSpec(n=10, m=3, seed=42))
# With a constant beta = 1 the proximal condition on beta is not enforced,
# and the descent inequality fails wherever it is violated. Backtracking
# restores both.
for label, policy in (("constant beta", ConstantBeta(1.0)), ("backtracking", BacktrackingBeta())):
    rep = solve(prob, x0, config=SolverConfig(beta_policy=policy, eps1=1e-6, eps2=1e-8))
    consts = theory.trajectory_constants(prob, rep.trace, rep.rho)
    print(f"\n{label}: {rep.status} in {rep.iterations} iterations; sigma over the path = {consts.sigma:.3g}")
    print(f"{'check':28s} {'passed':>9s}  worst margin")
    for s in theory.certify(prob, rep.trace, rep.rho, rep.alpha, consts):
        print(f"{s.name:28s} {s.passed:4d}/{s.total:<4d}  {s.worst_margin:+.3e}")

# The Lyapunov decrease is only certified for rho above the bound. For
# f = |x|^2/2 with x1 = 1 the constants on the box |x| <= 2 are known exactly.
k = InstanceConstants(M_f=2 * math.sqrt(2), L_f=1.0, M_F=1.0, L_F=0.0, sigma=1.0)
params = theory.choose_params(k, beta_max=1.0)
rho = theory.rho_lower_bound(k, params, D_S=2 * math.sqrt(2))
print(f"\npenalty lower bound: {rho:.6g}  (delta={params.delta:.3g}, delta'={params.delta_prime})")
cfg = SolverConfig(rho=rho, beta_policy=ConstantBeta(1.0), record_theory=True, constants=k,
                   eps1=1e-300, eps2=1e-300, eps_stat=1e-10, max_iter=500)
run = solve(linear_quadratic_problem(), [0.0, 1.5], config=cfg)
lyap = theory.lyapunov_trace(run.trace, rho, k)
print("first Lyapunov values:", [f"{r.P:.6f}" for r in lyap[:5]])
print("decrease certified at every step:", all(r.decrease_ok for r in lyap))
