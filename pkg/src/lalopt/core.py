"""Outer loop of the linearized augmented Lagrangian method.

Each iteration solves the proximal linearized subproblem, updates the
multiplier on the *linearized* constraint value and records a trace entry.
The proximal parameter is either constant or chosen by backtracking so that
the curvature condition on ``psi(x, lam) = lam'F(x) + rho/2 ||F(x)||^2``
holds at the accepted step.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import AssumptionWarning, BetaBoundError, NotPositiveDefiniteError, SubproblemError
from .model import InstanceConstants, NLPOracle, StationarityResidual, stationarity
from .subproblem import DEFAULT_INNER_TOL, SubproblemData, solve_subproblem
from .theory import gamma_k, trajectory_constants

DIVERGENCE_LIMIT = 1e12
BETA_CAP = 1e12
TRACE_COLUMNS = (
    "k", "f", "feas_norm", "grad_lag_x_norm", "grad_lag_lambda_norm", "beta",
    "gamma", "P", "dx_norm", "dlambda_norm", "descent_ok", "wall_time_s",
)


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class ConstantBeta:
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")


@dataclass(frozen=True)
class BacktrackingBeta:
    """Increase ``beta`` by ``factor`` until the curvature condition holds."""

    beta_init: float = 1.0
    factor: float = 2.0
    beta_min: float = 1e-8
    beta_max: float = 1e12

    def __post_init__(self):
        if not self.factor > 1:
            raise ValueError("factor must be > 1")
        if not 0 < self.beta_min <= self.beta_init <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_init <= beta_max")


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of :func:`solve`.

    The run stops when ``|f_k - f_{k-1}| <= eps1`` and ``||F(x_k)|| <= eps2``,
    or when ``||grad L_rho(x_k, lam_k)|| <= eps_stat`` if that is set.
    ``auto_increase_beta`` doubles a constant ``beta`` (up to 1e12) when
    the subproblem is not positive definite instead of failing.
    ``inner_failure="warn"`` accepts an iterative subproblem solve that
    hit ``max_inner`` and emits a warning instead of stopping the run.
    ``constants`` are only used for theory bookkeeping (``record_theory``
    and the sigma-form descent flag); without them the Lyapunov weights
    are filled in after the run from constants evaluated on the iterates.
    """

    rho: float = 1e3
    beta_policy: Union[ConstantBeta, BacktrackingBeta] = field(default_factory=ConstantBeta)
    alpha: float = 0.5
    eps1: float = 1e-3
    eps2: float = 1e-5
    eps_stat: Optional[float] = None
    max_iter: int = 10_000
    subproblem: str = "auto"
    inner_tol: float = DEFAULT_INNER_TOL
    max_inner: Optional[int] = None
    record_theory: bool = False
    constants: Optional[InstanceConstants] = None
    eta: float = 2.0
    check_init: bool = False
    auto_increase_beta: bool = False
    inner_failure: str = "raise"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("eps1", "eps2", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.eps_stat is not None and not self.eps_stat > 0:
            raise ValueError("eps_stat must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.subproblem not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown subproblem mode {self.subproblem!r}")
        if self.inner_failure not in ("raise", "warn"):
            raise ValueError("inner_failure must be 'raise' or 'warn'")

    @property
    def backtracking(self) -> bool:
        return isinstance(self.beta_policy, BacktrackingBeta)


# ------------------------------------------------------------------ trace


@dataclass(frozen=True)
class IterationRecord:
    """One outer iterate and the quantities measured at it.

    Record 0 holds the starting point; its step fields are zero and its
    ``beta``, ``gamma`` and ``P`` are NaN. The trailing fields are
    diagnostics consumed by :mod:`lalopt.theory`:

    ``aug_lag``
        ``L_rho(x_k, lam_k)``.
    ``aug_lag_prev`` / ``aug_lag_prev_dual``
        ``L_rho(x_{k-1}, lam_{k-1})`` and ``L_rho(x_k, lam_{k-1})``.
    ``eq2_residual``
        ``||grad f(x_k) + J_{k-1}' lam_k + beta_k dx_k||`` (subproblem
        stationarity written through the new multiplier); ``eq2_scale``
        is ``1 + ||grad f(x_k)||``.
    ``psi_gap``
        ``psi(x_k) - psi(x_{k-1}) - <grad psi(x_{k-1}), dx_k>`` at
        ``lam_{k-1}``.
    """

    k: int
    x: Optional[np.ndarray]
    lam: Optional[np.ndarray]
    beta: float
    f: float
    feas_norm: float
    dx_norm: float
    dlambda_norm: float
    grad_lag_x_norm: float
    grad_lag_lambda_norm: float
    gamma: float = math.nan
    P: float = math.nan
    descent_ok: bool = True
    wall_time: float = 0.0
    aug_lag: float = math.nan
    aug_lag_prev: float = math.nan
    aug_lag_prev_dual: float = math.nan
    jdx_norm: float = 0.0
    eq2_residual: float = 0.0
    eq2_scale: float = 1.0
    psi_gap: float = 0.0
    sigma_form_ok: Optional[bool] = None
    inner_iters: int = 0

    @property
    def grad_lag_norm(self) -> float:
        return math.hypot(self.grad_lag_x_norm, self.grad_lag_lambda_norm)


@dataclass(frozen=True)
class RunReport:
    status: str
    x: np.ndarray
    lam: np.ndarray
    residual: StationarityResidual
    iterations: int
    trace: tuple
    wall_time: float
    rho: float = math.nan
    alpha: float = math.nan
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "Converged"


# ------------------------------------------------------------ primitives


def augmented_lagrangian(problem: NLPOracle, x, lam, rho: float) -> float:
    """``f(x) + lam'F(x) + rho/2 ||F(x)||^2``."""
    lam = np.asarray(lam, dtype=float)
    Fx = problem.eval_F(x)
    if lam.shape != Fx.shape:
        raise ValueError(f"lam has shape {lam.shape}, F(x) has {Fx.shape}")
    return problem.eval_f(x) + psi(Fx, lam, rho)


def psi(F_x, lam, rho: float) -> float:
    """Coupling term ``lam'F + rho/2 ||F||^2`` from a constraint value."""
    return float(lam @ F_x + 0.5 * rho * (F_x @ F_x))


def grad_psi(problem: NLPOracle, x, lam, rho: float) -> np.ndarray:
    """``J(x)' (lam + rho F(x))``."""
    return problem.jac_F(x).T @ (lam + rho * problem.eval_F(x))


def dual_update(lam_k, rho: float, F_k, J_k, dx) -> np.ndarray:
    """Multiplier step on the linearized constraint: ``lam + rho (F_k + J_k dx)``."""
    lam_k = np.asarray(lam_k, dtype=float)
    F_k = np.asarray(F_k, dtype=float)
    J_k = np.atleast_2d(np.asarray(J_k, dtype=float))
    dx = np.asarray(dx, dtype=float)
    if J_k.shape != (lam_k.size, dx.size) or F_k.shape != lam_k.shape:
        raise ValueError("dimension mismatch in dual_update")
    return lam_k + rho * (F_k + J_k @ dx)


def _psi_gap(problem, x_k, lam_k, F_k, J_k, dx, rho):
    # exact expansion around the linearized value avoids cancellation
    u = F_k + J_k @ dx
    r = problem.constraint_remainder(x_k, dx, F_k, J_k)
    jdx = J_k @ dx
    return float((lam_k + rho * u) @ r + 0.5 * rho * (jdx @ jdx) + 0.5 * rho * (r @ r))


def prox_condition_holds(gap: float, beta: float, alpha: float, dx_norm: float) -> bool:
    rhs = 0.5 * (1.0 - alpha) * beta * dx_norm**2
    if dx_norm == 0.0:
        return True
    return gap <= rhs * (1.0 + 1e-10)


def backtrack_beta(
    problem: NLPOracle,
    data: SubproblemData,
    config: SolverConfig,
    beta_start: Optional[float] = None,
):
    """Smallest ``beta`` on the geometric grid passing the curvature test.

    Starts at ``beta_start`` (``beta_init`` by default), solves the
    subproblem, and multiplies ``beta`` by ``factor`` while
    ``psi``-gap ``> (1 - alpha) beta / 2 ||dx||^2``.

    Returns
    -------
    beta, solution

    Raises
    ------
    BetaBoundError
        If ``beta`` would exceed ``beta_max``: the proximal sequence is not
        bounded on this instance with the given ``rho``.
    """
    pol = config.beta_policy
    if not isinstance(pol, BacktrackingBeta):
        raise ValueError("backtrack_beta needs a BacktrackingBeta policy")
    beta = pol.beta_init if beta_start is None else beta_start
    while True:
        sol = solve_subproblem(
            problem, data.with_beta(beta), config.subproblem, config.inner_tol, config.max_inner
        )
        dx = sol.x_next - data.x_k
        gap = _psi_gap(problem, data.x_k, data.lam_k, data.F_k, data.J_k, dx, data.rho)
        if prox_condition_holds(gap, beta, config.alpha, float(np.linalg.norm(dx))):
            return beta, sol
        beta *= pol.factor
        if beta > pol.beta_max:
            raise BetaBoundError(
                f"proximal parameter would exceed beta_max={pol.beta_max:g}; "
                "the bounded-beta assumption fails for this rho"
            )


def _constant_step(problem, data: SubproblemData, config: SolverConfig):
    beta = data.beta
    while True:
        try:
            sol = solve_subproblem(
                problem, data.with_beta(beta), config.subproblem, config.inner_tol, config.max_inner
            )
            return beta, sol
        except NotPositiveDefiniteError:
            if not config.auto_increase_beta or 2.0 * beta > BETA_CAP:
                raise
            beta *= 2.0


def make_record(
    problem: NLPOracle,
    k: int,
    prev: IterationRecord,
    F_prev,
    J_prev,
    x,
    lam,
    beta: float,
    rho: float,
    alpha: float,
    wall_time: float = 0.0,
    sigma: Optional[float] = None,
    inner_iters: int = 0,
):
    """Build the trace entry for ``(x_k, lam_k)`` reached from ``prev``.

    Returns ``(record, F(x_k), J(x_k))`` so callers can reuse the
    evaluations for the next step.
    """
    dx = x - prev.x
    dlam = lam - prev.lam
    Fx = problem.eval_F(x)
    Jx = problem.jac_F(x)
    fx = problem.eval_f(x)
    gf = problem.grad_f(x)
    dxn = float(np.linalg.norm(dx))
    jdx = J_prev @ dx
    gap = _psi_gap(problem, prev.x, prev.lam, F_prev, J_prev, dx, rho)
    aug_prev_dual = fx + psi(Fx, prev.lam, rho)
    aug = fx + psi(Fx, lam, rho)
    eq2 = gf + J_prev.T @ lam + beta * dx
    gl = gf + Jx.T @ (lam + rho * Fx)
    sigma_ok = None
    if sigma is not None:
        lhs = aug_prev_dual - prev.aug_lag
        sigma_ok = bool(
            lhs <= -0.5 * (rho * sigma**2 + alpha * beta) * dxn**2 + 1e-8 * (1 + abs(prev.aug_lag))
        )
    rec = IterationRecord(
        k=k, x=x, lam=lam, beta=float(beta), f=fx,
        feas_norm=float(np.linalg.norm(Fx)),
        dx_norm=dxn,
        dlambda_norm=float(np.linalg.norm(dlam)),
        grad_lag_x_norm=float(np.linalg.norm(gl)),
        grad_lag_lambda_norm=float(np.linalg.norm(Fx)),
        descent_ok=prox_condition_holds(gap, beta, alpha, dxn),
        wall_time=wall_time,
        aug_lag=aug,
        aug_lag_prev=prev.aug_lag,
        aug_lag_prev_dual=aug_prev_dual,
        jdx_norm=float(np.linalg.norm(jdx)),
        eq2_residual=float(np.linalg.norm(eq2)),
        eq2_scale=1.0 + float(np.linalg.norm(gf)),
        psi_gap=gap,
        sigma_form_ok=sigma_ok,
        inner_iters=inner_iters,
    )
    return rec, Fx, Jx


def initial_record(problem: NLPOracle, x0, lam0, rho: float):
    Fx = problem.eval_F(x0)
    Jx = problem.jac_F(x0)
    fx = problem.eval_f(x0)
    gl = problem.grad_f(x0) + Jx.T @ (lam0 + rho * Fx)
    fn = float(np.linalg.norm(Fx))
    rec = IterationRecord(
        k=0, x=x0, lam=lam0, beta=math.nan, f=fx, feas_norm=fn, dx_norm=0.0,
        dlambda_norm=0.0, grad_lag_x_norm=float(np.linalg.norm(gl)),
        grad_lag_lambda_norm=fn, aug_lag=fx + psi(Fx, lam0, rho),
    )
    return rec, Fx, Jx


def with_theory(trace, rho: float, constants: InstanceConstants, eta: float = 2.0) -> tuple:
    """Fill ``gamma`` and ``P`` on every record after the first."""
    out = [trace[0]]
    for r in trace[1:]:
        g = gamma_k(r.beta, rho, eta, constants)
        out.append(replace(r, gamma=g, P=r.aug_lag + 0.5 * g * r.dx_norm**2))
    return tuple(out)


def _stop(prev: IterationRecord, rec: IterationRecord, config) -> bool:
    if config.eps_stat is not None and rec.grad_lag_norm <= config.eps_stat:
        return True
    return abs(rec.f - prev.f) <= config.eps1 and rec.feas_norm <= config.eps2


def _diverged(x, lam) -> bool:
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
        return True
    return np.linalg.norm(x) > DIVERGENCE_LIMIT or np.linalg.norm(lam) > DIVERGENCE_LIMIT


def _validate_start(problem, x0, lam0):
    x0 = np.array(x0, dtype=float)
    lam0 = np.zeros(problem.m) if lam0 is None else np.array(lam0, dtype=float)
    if x0.shape != (problem.n,) or lam0.shape != (problem.m,):
        raise ValueError(
            f"expected x0 of shape ({problem.n},) and lam0 of shape ({problem.m},)"
        )
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(lam0))):
        raise ValueError("x0 and lam0 must be finite")
    return x0, lam0


def solve(problem: NLPOracle, x0, lam0=None, config: Optional[SolverConfig] = None) -> RunReport:
    """Run the linearized augmented Lagrangian method from ``(x0, lam0)``.

    Parameters
    ----------
    problem : NLPOracle
    x0 : array_like, shape (n,)
    lam0 : array_like, shape (m,), optional
        Defaults to zero.
    config : SolverConfig, optional

    Returns
    -------
    RunReport
        ``status`` is one of ``Converged``, ``MaxIter``,
        ``SubproblemFailure`` or ``Diverged``; ``trace`` holds one
        :class:`IterationRecord` per iterate including the start.
    """
    config = config or SolverConfig()
    x, lam = _validate_start(problem, x0, lam0)
    rho, alpha = config.rho, config.alpha
    consts = config.constants
    sigma = consts.sigma if consts is not None else None
    t0 = time.perf_counter()

    rec, Fx, Jx = initial_record(problem, x, lam, rho)
    if config.check_init:
        c0 = consts.c0 if consts is not None and consts.c0 is not None else math.inf
        if rec.feas_norm**2 > min(1.0, c0 / rho):
            warnings.warn(
                f"||F(x0)||^2 = {rec.feas_norm**2:.3e} exceeds min(1, c0/rho); "
                "the initialization assumption of the analysis does not hold",
                AssumptionWarning,
                stacklevel=2,
            )
    trace = [rec]
    pol = config.beta_policy
    beta_next = pol.beta_init if config.backtracking else pol.beta
    status, message = "MaxIter", ""

    for k in range(1, config.max_iter + 1):
        data = SubproblemData(x, lam, Fx, Jx, rho, beta_next)
        try:
            if config.backtracking:
                beta, sol = backtrack_beta(problem, data, config, beta_next)
            else:
                beta, sol = _constant_step(problem, data, config)
                beta_next = beta
        except SubproblemError as exc:
            status, message = "SubproblemFailure", str(exc)
            break
        if not sol.converged:
            msg = f"inner solver stopped at gradient norm {sol.kkt_residual:.3e}"
            if config.inner_failure == "raise":
                status, message = "SubproblemFailure", msg
                break
            warnings.warn(f"iteration {k}: {msg}", RuntimeWarning, stacklevel=2)
        x_new = sol.x_next
        lam_new = dual_update(lam, rho, Fx, Jx, x_new - x)
        if _diverged(x_new, lam_new):
            status, message = "Diverged", "iterate left the divergence guard"
            break
        prev = rec
        rec, Fx, Jx = make_record(
            problem, k, prev, data.F_k, data.J_k, x_new, lam_new, beta, rho, alpha,
            time.perf_counter() - t0, sigma, sol.inner_iters,
        )
        if not (np.isfinite(rec.f) and np.isfinite(rec.aug_lag)):
            status, message = "Diverged", "non-finite objective"
            break
        trace.append(rec)
        x, lam = x_new, lam_new
        if config.backtracking:
            beta_next = max(pol.beta_min, beta / pol.factor)
        if _stop(prev, rec, config):
            status = "Converged"
            break

    trace = tuple(trace)
    if config.record_theory and len(trace) > 1:
        c = consts if consts is not None else trajectory_constants(problem, trace, rho)
        if c.sigma > 0:
            trace = with_theory(trace, rho, c, config.eta)
    return RunReport(
        status=status, x=x, lam=lam, residual=stationarity(problem, x, lam),
        iterations=len(trace) - 1, trace=trace,
        wall_time=time.perf_counter() - t0, rho=rho, alpha=alpha, message=message,
    )


def rebuild_trace(problem: NLPOracle, X, Lam, betas, rho: float, alpha: float) -> tuple:
    """Recompute trace records from stored iterates (for certification)."""
    X = np.asarray(X, dtype=float)
    Lam = np.asarray(Lam, dtype=float)
    rec, Fx, Jx = initial_record(problem, X[0], Lam[0], rho)
    trace = [rec]
    for k in range(1, len(X)):
        rec, F_new, J_new = make_record(
            problem, k, rec, Fx, Jx, X[k], Lam[k], float(betas[k]), rho, alpha
        )
        Fx, Jx = F_new, J_new
        trace.append(rec)
    return tuple(trace)


# ------------------------------------------------------------- trace I/O


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def iterates_path(path) -> Path:
    """Location of the iterate sidecar that accompanies a trace CSV."""
    return Path(path).with_suffix(".iterates.npz")


def write_trace_csv(report: RunReport, path, iterates: bool = True) -> None:
    """Write the trace in the fixed column order.

    Floats are written with ``repr`` so the file round-trips exactly. With
    ``iterates=True`` the primal/dual iterates go to a ``.iterates.npz``
    sidecar used by the ``certify`` command.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in report.trace:
            w.writerow(
                [_fmt(v) for v in (
                    r.k, r.f, r.feas_norm, r.grad_lag_x_norm, r.grad_lag_lambda_norm,
                    r.beta, r.gamma, r.P, r.dx_norm, r.dlambda_norm, r.descent_ok, r.wall_time,
                )]
            )
    if iterates:
        np.savez(
            iterates_path(path),
            X=np.array([r.x for r in report.trace]),
            Lam=np.array([r.lam for r in report.trace]),
            betas=np.array([r.beta for r in report.trace]),
            rho=np.float64(report.rho),
            alpha=np.float64(report.alpha),
        )


def read_trace_csv(path) -> list:
    """Read a trace CSV back as a list of ``dict`` rows with typed values."""
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace columns {reader.fieldnames}")
        for row in reader:
            d = {c: float(row[c]) for c in TRACE_COLUMNS}
            d["k"] = int(row["k"])
            d["descent_ok"] = row["descent_ok"] == "1"
            rows.append(d)
    return rows


def load_iterates(path) -> dict:
    side = iterates_path(path)
    if not side.exists():
        raise FileNotFoundError(
            f"{side} not found; certification needs the iterates written next to the trace"
        )
    with np.load(side) as z:
        return {k: z[k] for k in z.files}
