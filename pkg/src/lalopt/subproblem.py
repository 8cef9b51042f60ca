"""Proximal linearized augmented Lagrangian subproblem.

At an outer iterate ``x_k`` the model minimised is::

    phi(x) = f(x) + <lam_k, F_k + J_k (x - x_k)>
             + rho/2 ||F_k + J_k (x - x_k)||^2 + beta/2 ||x - x_k||^2

For quadratic ``f`` this is one symmetric positive-definite solve. For a
general smooth ``f`` an accelerated gradient method with backtracking and
function-value restart is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotPositiveDefiniteError, SubproblemError
from .model import SPARSE_THRESHOLD, NLPOracle

DEFAULT_INNER_TOL = 1e-8
MIN_INNER_ITERS = 5000


@dataclass(frozen=True)
class SubproblemData:
    x_k: np.ndarray
    lam_k: np.ndarray
    F_k: np.ndarray
    J_k: np.ndarray
    rho: float
    beta: float

    def __post_init__(self):
        m, n = np.shape(self.J_k)
        if np.shape(self.x_k) != (n,) or np.shape(self.lam_k) != (m,):
            raise ValueError("x_k / lam_k do not match the Jacobian shape")
        if np.shape(self.F_k) != (m,):
            raise ValueError("F_k does not match the Jacobian shape")
        if not (self.rho > 0 and self.beta > 0):
            raise ValueError(f"rho and beta must be > 0, got {self.rho}, {self.beta}")

    def with_beta(self, beta: float) -> "SubproblemData":
        return SubproblemData(self.x_k, self.lam_k, self.F_k, self.J_k, self.rho, beta)

    def linearized(self, x):
        """Linearized constraint value ``F_k + J_k (x - x_k)``."""
        return self.F_k + self.J_k @ (x - self.x_k)

    def model_value(self, f_val: float, x) -> float:
        """``L̄_rho(x, lam_k; x_k)`` given ``f(x)`` (no proximal term)."""
        u = self.linearized(x)
        return f_val + self.lam_k @ u + 0.5 * self.rho * (u @ u)

    def phi(self, problem: NLPOracle, x) -> float:
        d = x - self.x_k
        return self.model_value(problem.eval_f(x), x) + 0.5 * self.beta * (d @ d)

    def grad_phi(self, problem: NLPOracle, x) -> np.ndarray:
        u = self.linearized(x)
        return (
            problem.grad_f(x)
            + self.J_k.T @ (self.lam_k + self.rho * u)
            + self.beta * (x - self.x_k)
        )


@dataclass(frozen=True)
class SubproblemSolution:
    x_next: np.ndarray
    kkt_residual: float
    inner_iters: int
    converged: bool = True


def _rhs(p, data: SubproblemData):
    J = data.J_k
    return (
        -p
        - J.T @ data.lam_k
        - data.rho * (J.T @ data.F_k)
        + data.rho * (J.T @ (J @ data.x_k))
        + data.beta * data.x_k
    )


def solve_direct(Q, p, data: SubproblemData) -> SubproblemSolution:
    """Exact solve for a quadratic objective ``1/2 x'Qx + p'x``.

    Solves ``(Q + rho J'J + beta I) x = rhs`` by Cholesky when dense, or by
    conjugate gradients on the implicit operator when ``Q`` is sparse and
    ``n >= 2000``.

    Raises
    ------
    NotPositiveDefiniteError
        If the system matrix is not positive definite (``beta`` too small
        for the curvature of ``f``).
    """
    p = np.asarray(p, dtype=float)
    n = p.size
    J, rho, beta = data.J_k, data.rho, data.beta
    rhs = _rhs(p, data)
    if sp.issparse(Q) and n >= SPARSE_THRESHOLD:
        def matvec(v):
            return Q @ v + rho * (J.T @ (J @ v)) + beta * v

        H = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        x, info = spla.cg(H, rhs, x0=data.x_k.copy(), rtol=1e-13, atol=0.0, maxiter=20 * n)
        if info != 0:
            raise NotPositiveDefiniteError(
                f"conjugate gradients did not converge (info={info}); the "
                "subproblem may not be positive definite, try a larger beta"
            )
        res = float(np.linalg.norm(matvec(x) - rhs))
        return SubproblemSolution(x, res, int(info))
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q, dtype=float)
    H = Qd + rho * (J.T @ J)
    H[np.diag_indices_from(H)] += beta
    try:
        cf = sla.cho_factor(H, lower=False, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"Q + rho J'J + beta I is not positive definite at beta={beta}; "
            "f is too weakly convex for this beta, use a larger one"
        ) from exc
    x = sla.cho_solve(cf, rhs)
    res = float(np.linalg.norm(H @ x - rhs))
    return SubproblemSolution(x, res, 0)


def accelerated_descent(
    fun: Callable,
    grad: Callable,
    x0: np.ndarray,
    gtol: float,
    max_iter: int,
):
    """Minimise a smooth function by restarted accelerated gradient.

    Uses a backtracking estimate of the gradient Lipschitz constant and
    restarts momentum whenever the objective would increase, so the
    returned point never has a larger value than ``x0``.

    Returns
    -------
    x, grad_norm, iterations, converged
    """
    x = np.array(x0, dtype=float)
    fx = fun(x)
    gx = grad(x)
    gnorm = float(np.linalg.norm(gx))
    if gnorm <= gtol:
        return x, gnorm, 0, True
    # secant estimate of the Lipschitz constant along -grad
    h = 1e-6 * (1.0 + np.linalg.norm(x)) / gnorm
    L = max(float(np.linalg.norm(grad(x - h * gx) - gx) / (h * gnorm)), 1e-12)
    y, fy, gy = x, fx, gx
    t = 1.0
    for it in range(1, max_iter + 1):
        while True:
            z = y - gy / L
            fz = fun(z)
            d = z - y
            if fz <= fy + gy @ d + 0.5 * L * (d @ d) + 1e-15 * abs(fy):
                break
            L *= 2.0
            if not np.isfinite(L):
                raise SubproblemError("line search failed: non-finite step size")
        if fz <= fx + 1e-15 * (1.0 + abs(fx)):
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = z + ((t - 1.0) / t_next) * (z - x)
            x, fx, t = z, fz, t_next
            gx = grad(x)
            fy, gy = fun(y), grad(y)
        else:
            # objective went up: restart momentum from x
            t = 1.0
            y, fy, gy = x, fx, gx
        gnorm = float(np.linalg.norm(gx))
        if gnorm <= gtol:
            return x, gnorm, it, True
        L *= 0.9
    return x, gnorm, max_iter, False


def solve_iterative(
    problem: NLPOracle,
    data: SubproblemData,
    tol: float = DEFAULT_INNER_TOL,
    max_inner: Optional[int] = None,
) -> SubproblemSolution:
    """Approximate subproblem solve for a general smooth objective.

    Stops when ``||grad phi(x)|| <= tol * (1 + ||grad phi(x_k)||)``. The
    returned solution has ``converged=False`` if ``max_inner`` iterations
    did not reach the tolerance; the best iterate is returned regardless.
    """
    if max_inner is None:
        max_inner = max(10 * problem.n, MIN_INNER_ITERS)
    g0 = data.grad_phi(problem, data.x_k)
    gtol = tol * (1.0 + float(np.linalg.norm(g0)))
    x, gnorm, iters, ok = accelerated_descent(
        lambda x: data.phi(problem, x),
        lambda x: data.grad_phi(problem, x),
        data.x_k,
        gtol,
        max_inner,
    )
    return SubproblemSolution(x, gnorm, iters, ok)


def solve_subproblem(
    problem: NLPOracle,
    data: SubproblemData,
    mode: str = "auto",
    tol: float = DEFAULT_INNER_TOL,
    max_inner: Optional[int] = None,
) -> SubproblemSolution:
    """Dispatch to :func:`solve_direct` or :func:`solve_iterative`."""
    if mode not in ("auto", "direct", "iterative"):
        raise ValueError(f"unknown subproblem mode {mode!r}")
    if mode == "direct" or (mode == "auto" and problem.is_quadratic):
        if not problem.is_quadratic:
            raise ValueError("direct subproblem solves need a quadratic objective")
        return solve_direct(problem.Q, problem.p, data)
    return solve_iterative(problem, data, tol, max_inner)
