"""Sequential convex programming baseline.

Each step minimises ``f(x) + beta/2 ||x - x_k||^2`` subject to the
linearized constraints ``F_k + J_k (x - x_k) = 0``. For quadratic ``f``
this is a single symmetric indefinite KKT solve; otherwise the step is
computed in the null space of ``J_k``. No globalization is applied.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import RunReport, _diverged, _stop, _validate_start, initial_record, make_record
from .errors import SingularKKTError, SubproblemError
from .model import SPARSE_THRESHOLD, NLPOracle, stationarity
from .subproblem import DEFAULT_INNER_TOL, MIN_INNER_ITERS, accelerated_descent

RANK_TOL = 1e-12
KKT_RTOL = 1e-8


@dataclass(frozen=True)
class ScpConfig:
    beta: float = 1.0
    eps1: float = 1e-3
    eps2: float = 1e-5
    eps_stat: Optional[float] = None
    max_iter: int = 10_000
    inner_tol: float = DEFAULT_INNER_TOL
    max_inner: Optional[int] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError("tolerances must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def _check_rank(J):
    if sp.issparse(J):
        J = J.toarray()
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[-1] <= RANK_TOL * max(s[0], 1.0):
        raise SingularKKTError(
            f"constraint Jacobian is rank deficient (sigma_min={s[-1] if s.size else 0:.3e})"
        )


def scp_step(Q, p, x_k, F_k, J_k, beta: float):
    """One SCP step for ``f(x) = 1/2 x'Qx + p'x``.

    Solves ``[[Q + beta I, J'], [J, 0]] (x, lam) = (beta x_k - p, J x_k - F_k)``.

    Returns
    -------
    x_next, lam_next

    Raises
    ------
    SingularKKTError
        If ``J_k`` does not have full row rank or the KKT matrix is singular.
    """
    x_k = np.asarray(x_k, dtype=float)
    F_k = np.atleast_1d(np.asarray(F_k, dtype=float))
    J_k = np.atleast_2d(np.asarray(J_k, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    m, n = J_k.shape
    _check_rank(J_k)
    rhs = np.concatenate([beta * x_k - p, J_k @ x_k - F_k])
    if sp.issparse(Q) and n >= SPARSE_THRESHOLD:
        H = Q + beta * sp.identity(n, format="csr")
        Js = sp.csr_matrix(J_k)
        K = sp.bmat([[H, Js.T], [Js, None]], format="csc")
        sol = spla.spsolve(K, rhs)
        res = np.linalg.norm(K @ sol - rhs)
    else:
        Qd = Q.toarray() if sp.issparse(Q) else np.atleast_2d(np.asarray(Q, dtype=float))
        K = np.zeros((n + m, n + m))
        K[:n, :n] = Qd + beta * np.eye(n)
        K[:n, n:] = J_k.T
        K[n:, :n] = J_k
        try:
            sol = sla.solve(K, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
            raise SingularKKTError(f"KKT matrix is singular: {exc}") from exc
        res = np.linalg.norm(K @ sol - rhs)
    if not np.all(np.isfinite(sol)) or res > KKT_RTOL * (1.0 + np.linalg.norm(rhs)):
        raise SingularKKTError(f"KKT solve residual {res:.3e} too large")
    return sol[:n], sol[n:]


def _nullspace_step(problem: NLPOracle, x_k, F_k, J_k, beta, config: ScpConfig):
    _check_rank(J_k)
    dx_p = np.linalg.lstsq(J_k, -F_k, rcond=None)[0]
    N = sla.null_space(J_k)
    base = x_k + dx_p

    def fun(z):
        x = base + N @ z
        d = x - x_k
        return problem.eval_f(x) + 0.5 * beta * (d @ d)

    def grad(z):
        x = base + N @ z
        return N.T @ (problem.grad_f(x) + beta * (x - x_k))

    g0 = grad(np.zeros(N.shape[1]))
    gtol = config.inner_tol * (1.0 + float(np.linalg.norm(g0)))
    max_inner = config.max_inner or max(10 * problem.n, MIN_INNER_ITERS)
    z, gn, _, ok = accelerated_descent(fun, grad, np.zeros(N.shape[1]), gtol, max_inner)
    if not ok:
        raise SubproblemError(f"null-space inner solve stopped at gradient norm {gn:.3e}")
    x = base + N @ z
    g = problem.grad_f(x) + beta * (x - x_k)
    lam = np.linalg.lstsq(J_k.T, -g, rcond=None)[0]
    return x, lam


def scp_solve(problem: NLPOracle, x0, config: Optional[ScpConfig] = None, lam0=None) -> RunReport:
    """Iterate :func:`scp_step` with the shared stopping rule.

    The trace uses the same record type as :func:`lalopt.core.solve`, with
    the Lagrangian (``rho = 0``) in place of the augmented one.
    """
    config = config or ScpConfig()
    x, lam = _validate_start(problem, x0, lam0)
    beta = config.beta
    t0 = time.perf_counter()
    rec, Fx, Jx = initial_record(problem, x, lam, 0.0)
    trace = [rec]
    status, message = "MaxIter", ""
    for k in range(1, config.max_iter + 1):
        try:
            if problem.is_quadratic:
                x_new, lam_new = scp_step(problem.Q, problem.p, x, Fx, Jx, beta)
            else:
                x_new, lam_new = _nullspace_step(problem, x, Fx, Jx, beta, config)
        except (SubproblemError, SingularKKTError) as exc:
            status, message = "SubproblemFailure", str(exc)
            break
        if _diverged(x_new, lam_new):
            status, message = "Diverged", "iterate left the divergence guard"
            break
        prev = rec
        rec, F_new, J_new = make_record(
            problem, k, prev, Fx, Jx, x_new, lam_new, beta, 0.0, 0.5,
            time.perf_counter() - t0,
        )
        if not np.isfinite(rec.f):
            status, message = "Diverged", "non-finite objective"
            break
        trace.append(rec)
        x, lam, Fx, Jx = x_new, lam_new, F_new, J_new
        if _stop(prev, rec, config):
            status = "Converged"
            break
    return RunReport(
        status=status, x=x, lam=lam, residual=stationarity(problem, x, lam),
        iterations=len(trace) - 1, trace=tuple(trace),
        wall_time=time.perf_counter() - t0, rho=0.0, alpha=math.nan, message=message,
    )
