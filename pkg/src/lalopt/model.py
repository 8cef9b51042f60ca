"""Problem abstraction for smooth equality-constrained programs.

The central object is :class:`NLPOracle`, a bundle of the objective ``f``,
its gradient, the constraint map ``F: R^n -> R^m`` and its Jacobian.
:class:`QCQP` is the explicit quadratic specialisation used by the direct
subproblem path and the benchmark generator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssumptionWarning, DerivativeCheckError

# above this dimension sparse input stays sparse
SPARSE_THRESHOLD = 2000
FD_REL_TOL = 1e-5


class NLPOracle:
    """Callable bundle describing ``min f(x) s.t. F(x) = 0``.

    Parameters
    ----------
    n, m : int
        Number of variables and of equality constraints (``1 <= m <= n``).
    eval_f, grad_f : callable
        Objective ``x -> float`` and its gradient ``x -> (n,)``.
    eval_F, jac_F : callable
        Constraints ``x -> (m,)`` and their Jacobian ``x -> (m, n)``.
    """

    is_quadratic = False

    def __init__(
        self,
        n: int,
        m: int,
        eval_f: Callable,
        grad_f: Callable,
        eval_F: Callable,
        jac_F: Callable,
    ):
        _check_dims(n, m)
        self.n = int(n)
        self.m = int(m)
        self._f = eval_f
        self._g = grad_f
        self._F = eval_F
        self._J = jac_F

    def eval_f(self, x: np.ndarray) -> float:
        return float(self._f(x))

    def grad_f(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._g(x), dtype=float).reshape(self.n)

    def eval_F(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._F(x), dtype=float).reshape(self.m)

    def jac_F(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._J(x), dtype=float).reshape(self.m, self.n)

    def constraint_remainder(self, x, dx, F_x=None, J_x=None) -> np.ndarray:
        """Second-order remainder ``F(x + dx) - F(x) - J(x) dx``."""
        F_x = self.eval_F(x) if F_x is None else F_x
        J_x = self.jac_F(x) if J_x is None else J_x
        return self.eval_F(x + dx) - (F_x + J_x @ dx)


def _check_dims(n, m):
    if n < 1 or m < 1 or m > n:
        raise ValueError(f"need 1 <= m <= n, got n={n}, m={m}")


def _symmetrize(M, n):
    if sp.issparse(M):
        M = sp.csr_array(M, dtype=float)
        if M.shape != (n, n):
            raise ValueError(f"matrix has shape {M.shape}, expected {(n, n)}")
        M = ((M + M.T) * 0.5).tocsr()
        if n < SPARSE_THRESHOLD:
            return M.toarray()
        return M
    M = np.array(M, dtype=float)
    if M.shape != (n, n):
        raise ValueError(f"matrix has shape {M.shape}, expected {(n, n)}")
    return 0.5 * (M + M.T)


class QCQP(NLPOracle):
    """Quadratic objective with quadratic equality constraints.

    ``f(x) = 1/2 x'Qx + p'x + c`` and ``f_i(x) = 1/2 x'A_i x + b_i'x + c_i``.
    Matrices may be dense arrays or scipy sparse matrices; all are
    symmetrised on construction and sparse input is densified when
    ``n < 2000``.
    """

    is_quadratic = True

    def __init__(self, Q, p, c=0.0, constraints: Sequence[tuple] = ()):
        p = np.array(p, dtype=float).ravel()
        n = p.size
        m = len(constraints)
        _check_dims(n, m)
        self.n = n
        self.m = m
        self.Q = _symmetrize(Q, n)
        self.p = p
        self.c = float(c)
        self.A = [_symmetrize(A, n) for A, _, _ in constraints]
        self.b = np.array([np.ravel(b) for _, b, _ in constraints], dtype=float)
        self.cc = np.array([ci for _, _, ci in constraints], dtype=float)
        if self.b.shape != (m, n):
            raise ValueError("constraint vectors b_i must have length n")
        self.sparse = any(sp.issparse(M) for M in [self.Q, *self.A])
        if not self.sparse:
            self._A_stack = np.stack(self.A)

    @property
    def constraints(self):
        return [(A, b, c) for A, b, c in zip(self.A, self.b, self.cc)]

    def eval_f(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.Q @ x) + self.p @ x + self.c)

    def grad_f(self, x):
        return self.Q @ np.asarray(x, dtype=float) + self.p

    def _Ax(self, x):
        if self.sparse:
            return np.array([A @ x for A in self.A])
        return self._A_stack @ x

    def eval_F(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (self._Ax(x) @ x) + self.b @ x + self.cc

    def jac_F(self, x):
        return self._Ax(np.asarray(x, dtype=float)) + self.b

    def constraint_remainder(self, x, dx, F_x=None, J_x=None):
        # exact for quadratics, avoids cancellation
        dx = np.asarray(dx, dtype=float)
        return 0.5 * (self._Ax(dx) @ dx)

    def hess_norm_f(self) -> float:
        """Spectral norm of ``Q``."""
        return _spectral_norm(self.Q)

    def curvature_F(self) -> float:
        """Lipschitz constant of the Jacobian, ``sqrt(||sum_i A_i^2||_2)``.

        For a single constraint this is ``||A_1||_2``. For several it is the
        tightest cheap bound on ``sup_|d|=1 ||[A_1 d; ...; A_m d]||_2``.
        """
        if self.m == 1:
            return _spectral_norm(self.A[0])
        S = sum(A @ A for A in self.A)
        return float(np.sqrt(_spectral_norm(S)))


def _spectral_norm(M) -> float:
    if sp.issparse(M):
        if min(M.shape) < 3:
            return float(np.linalg.norm(M.toarray(), 2))
        return float(spla.svds(M, k=1, return_singular_vectors=False)[0])
    if not np.any(M):
        return 0.0
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True)
class StationarityResidual:
    """Residuals of the first-order conditions at ``(x, lambda)``."""

    grad_lag_norm: float
    feas_norm: float

    def max(self) -> float:
        return max(self.grad_lag_norm, self.feas_norm)


def stationarity(problem: NLPOracle, x, lam) -> StationarityResidual:
    """Return ``(||grad f(x) + J(x)' lam||, ||F(x)||)``."""
    x = np.asarray(x, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    if x.size != problem.n or lam.size != problem.m:
        raise ValueError(
            f"dimension mismatch: x has {x.size} (n={problem.n}), "
            f"lambda has {lam.size} (m={problem.m})"
        )
    g = problem.grad_f(x) + problem.jac_F(x).T @ lam
    return StationarityResidual(
        float(np.linalg.norm(g)), float(np.linalg.norm(problem.eval_F(x)))
    )


@dataclass(frozen=True)
class InstanceConstants:
    """Constants of the standing assumptions, with provenance.

    ``provenance`` maps each field name to ``"user-supplied"`` or
    ``"trajectory-estimated"``.
    """

    M_f: float
    L_f: float
    M_F: float
    L_F: float
    sigma: float
    rho0: float = 0.0
    U_bar: Optional[float] = None
    L_bar: Optional[float] = None
    c0: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("M_f", "L_f", "M_F", "L_F", "sigma", "rho0"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.c0 is not None and self.c0 <= 0:
            raise ValueError("c0 must be > 0")

    FIELDS = ("M_f", "L_f", "M_F", "L_F", "sigma", "rho0", "U_bar", "L_bar", "c0")

    def replace(self, **kw) -> "InstanceConstants":
        d = {k: getattr(self, k) for k in self.FIELDS}
        prov = dict(self.provenance)
        for k, v in kw.items():
            d[k] = v
            prov[k] = "user-supplied"
        return InstanceConstants(**d, provenance=prov)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, d: dict, provenance="user-supplied") -> "InstanceConstants":
        kw = {k: d[k] for k in cls.FIELDS if k in d and d[k] is not None}
        missing = [k for k in ("M_f", "L_f", "M_F", "L_F", "sigma") if k not in kw]
        if missing:
            raise ValueError(f"constants missing: {', '.join(missing)}")
        kw = {k: float(v) for k, v in kw.items()}
        return cls(**kw, provenance={k: provenance for k in kw})


@dataclass
class DerivativeReport:
    grad_error: float
    jac_error: float
    tol: float = FD_REL_TOL
    worst_grad_point: Optional[np.ndarray] = None
    worst_jac_point: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.grad_error <= self.tol and self.jac_error <= self.tol


def _fd_step(x):
    return 1e-6 * (1.0 + np.abs(x))


def fd_gradient(fun, x):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = _fd_step(x)
    g = np.empty_like(x)
    e = x.copy()
    for i in range(x.size):
        e[i] = x[i] + h[i]
        fp = fun(e)
        e[i] = x[i] - h[i]
        fm = fun(e)
        e[i] = x[i]
        g[i] = (fp - fm) / (2 * h[i])
    return g


def fd_jacobian(fun, x):
    """Central-difference Jacobian of a vector function, shape ``(m, n)``."""
    x = np.asarray(x, dtype=float)
    h = _fd_step(x)
    cols = []
    e = x.copy()
    for i in range(x.size):
        e[i] = x[i] + h[i]
        fp = np.asarray(fun(e), dtype=float)
        e[i] = x[i] - h[i]
        fm = np.asarray(fun(e), dtype=float)
        e[i] = x[i]
        cols.append((fp - fm) / (2 * h[i]))
    return np.column_stack(cols)


def _rel_err(approx, ref):
    return float(np.linalg.norm(approx - ref) / max(1.0, np.linalg.norm(ref)))


def check_derivatives(
    problem: NLPOracle, num_points: int = 10, seed: int = 0, points=None
) -> DerivativeReport:
    """Compare analytic derivatives against central finite differences.

    The error at a point is ``||analytic - fd|| / max(1, ||fd||)``, taken per
    Jacobian row; the report holds the maximum over points. Points are
    standard normal draws unless given explicitly.
    """
    if points is None:
        if num_points < 1:
            raise ValueError("num_points must be >= 1")
        rng = np.random.default_rng(seed)
        points = rng.standard_normal((num_points, problem.n))
    report = DerivativeReport(0.0, 0.0)
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        g = problem.grad_f(x)
        J = problem.jac_F(x)
        g_fd = fd_gradient(problem.eval_f, x)
        J_fd = fd_jacobian(problem.eval_F, x)
        for name, arr in (("grad_f", g), ("jac_F", J), ("fd grad", g_fd), ("fd jac", J_fd)):
            if not np.all(np.isfinite(arr)):
                raise DerivativeCheckError(f"non-finite {name} at x={x.tolist()}")
        eg = _rel_err(g, g_fd)
        ej = max(_rel_err(J[i], J_fd[i]) for i in range(problem.m))
        if eg >= report.grad_error:
            report.grad_error, report.worst_grad_point = eg, x.copy()
        if ej >= report.jac_error:
            report.jac_error, report.worst_jac_point = ej, x.copy()
    return report


def _sigma_min(J):
    return float(np.linalg.svd(J, compute_uv=False)[-1])


def estimate_constants(problem: NLPOracle, sample_points) -> InstanceConstants:
    """Estimate ``M_f, L_f, M_F, L_F, sigma`` over a finite point set.

    Bounds are maxima (minimum for ``sigma``) over the samples; Lipschitz
    constants are secant ratios over sample pairs, replaced by the exact
    curvature norms when the problem is a :class:`QCQP`.
    """
    X = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least 2 sample points")
    G = np.array([problem.grad_f(x) for x in X])
    Js = [problem.jac_F(x) for x in X]
    M_f = float(np.max(np.linalg.norm(G, axis=1)))
    M_F = max(float(np.linalg.norm(J, 2)) for J in Js)
    sigma = min(_sigma_min(J) for J in Js)
    if sigma <= 0.0:
        warnings.warn(
            "sigma_min of the constraint Jacobian is 0 at a sample point; "
            "the LICQ assumption fails locally",
            AssumptionWarning,
            stacklevel=2,
        )
    if isinstance(problem, QCQP):
        L_f = problem.hess_norm_f()
        L_F = problem.curvature_F()
    else:
        L_f = L_F = 0.0
        for i in range(len(X)):
            for j in range(i + 1, len(X)):
                d = np.linalg.norm(X[i] - X[j])
                if d == 0.0:
                    continue
                L_f = max(L_f, np.linalg.norm(G[i] - G[j]) / d)
                L_F = max(L_F, np.linalg.norm(Js[i] - Js[j], 2) / d)
    est = "trajectory-estimated"
    return InstanceConstants(
        M_f=M_f,
        L_f=float(L_f),
        M_F=M_F,
        L_F=float(L_F),
        sigma=max(sigma, 0.0),
        provenance={k: est for k in ("M_f", "L_f", "M_F", "L_F", "sigma")},
    )
