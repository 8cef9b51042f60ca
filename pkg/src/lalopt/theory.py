"""Certified quantities of the convergence analysis, evaluated on traces.

Closed-form parameter formulas (``c1``, ``c2``, ``gamma_k``, the penalty
lower bound, ``Gamma(beta)``, ``L_psi``, ``alpha_hat``) are pure functions of
an :class:`~lalopt.model.InstanceConstants`. The ``check_*`` functions
evaluate the inequalities proved for the iterates on a recorded trace and
report per-iteration pass/fail with margins.

Every inequality ``lhs <= rhs`` is tested as
``lhs <= rhs + 1e-6 |rhs| + 1e-12 (1 + scale)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .model import InstanceConstants, NLPOracle, QCQP, estimate_constants

REL_SLACK = 1e-6
ABS_FLOOR = 1e-12


def _leq(lhs, rhs, scale=0.0):
    return lhs <= rhs + REL_SLACK * abs(rhs) + ABS_FLOOR * (1.0 + abs(scale))


def _pow(base, e):
    try:
        return base**e
    except OverflowError:
        return math.inf


def _margin(lhs, rhs):
    return rhs - lhs


@dataclass(frozen=True)
class TheoryParams:
    """Free parameters of the penalty and proximal-parameter construction.

    ``delta_prime=None`` means the second case of the ``beta`` analysis is
    void for the instance and its term is dropped from the penalty bound.
    """

    eta: float = 2.0
    delta: float = 2.0
    delta_prime: Optional[float] = 2.0
    alpha: float = 0.5

    def __post_init__(self):
        if not self.eta > 1:
            raise ValueError("eta must be > 1")
        if not self.delta > 1 or (self.delta_prime is not None and not self.delta_prime > 1):
            raise ValueError("delta and delta_prime must be > 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


# ---------------------------------------------------------------- formulas


def c1(beta, L_f, sigma):
    return 2.0 * (L_f + beta) ** 2 / sigma**2


def c2(beta, M_f, L_F, M_F, sigma):
    return 2.0 * (M_f * L_F + (2.0 * M_F + sigma) * beta) ** 2 / sigma**4


def penalty_factor(rho, eta=2.0):
    """``1 / (2 rho^((eta-1)/eta)) + 1 / rho``."""
    return 1.0 / (2.0 * rho ** ((eta - 1.0) / eta)) + 1.0 / rho


def gamma_k(beta, rho, eta, constants: InstanceConstants):
    """Lyapunov weight ``4 kappa(rho) max{c1(beta), c2(beta)}``."""
    k = constants
    cmax = max(c1(beta, k.L_f, k.sigma), c2(beta, k.M_f, k.L_F, k.M_F, k.sigma))
    return 4.0 * penalty_factor(rho, eta) * cmax


def _root_pair(delta, scale):
    s = math.sqrt(1.0 - 1.0 / delta**2)
    return delta * (1.0 - s) * scale, delta * (1.0 + s) * scale


def case_threshold(constants: InstanceConstants):
    """``(L_f sigma - M_f L_F) / (2 M_F)``; above it ``c2`` dominates ``c1``."""
    k = constants
    if k.M_F == 0:
        return -math.inf
    return (k.L_f * k.sigma - k.M_f * k.L_F) / (2.0 * k.M_F)


def beta_interval_case1(constants: InstanceConstants, delta):
    k = constants
    return _root_pair(delta, k.M_f * k.L_F / (2.0 * k.M_F + k.sigma))


def beta_interval_case2(constants: InstanceConstants, delta_prime):
    return _root_pair(delta_prime, constants.L_f)


def _delta_for_upper_root(target, scale):
    # smallest delta with delta (1 + sqrt(1 - 1/delta^2)) scale >= target
    if scale <= 0:
        return None
    s = target / scale
    if s < 1.0:
        return None
    return 0.5 * (s + 1.0 / s)


def choose_params(
    constants: InstanceConstants, beta_max: float, alpha: float = 0.5, eta: float = 2.0
) -> TheoryParams:
    """Pick ``delta`` and ``delta_prime`` for a run.

    ``delta`` is the smallest value ``>= 2`` whose upper case-1 root covers
    ``beta_max``. ``delta_prime`` places the upper case-2 root on the case
    threshold; it is ``None`` when the threshold is not positive (case 2
    cannot occur) and 2 when the threshold lies below ``L_f``.
    """
    k = constants
    scale1 = k.M_f * k.L_F / (2.0 * k.M_F + k.sigma)
    d = _delta_for_upper_root(beta_max, scale1)
    delta = max(2.0, d) if d is not None else 2.0
    thr = case_threshold(k)
    dp = None
    if thr > 0:
        # no delta' > 1 reaches a threshold below L_f; keep the default then
        dp = _delta_for_upper_root(thr, k.L_f)
        if dp is None or dp <= 1.0:
            dp = 2.0
    return TheoryParams(eta=eta, delta=delta, delta_prime=dp, alpha=alpha)


def rho_lower_bound(
    constants: InstanceConstants, params: TheoryParams, D_S: Optional[float] = None
) -> float:
    """Smallest penalty parameter admitted by the convergence analysis."""
    k = constants
    missing = [n for n in ("M_f", "L_f", "M_F", "L_F", "sigma") if getattr(k, n) is None]
    if D_S is None:
        missing.append("D_S")
    if missing:
        raise ValueError(f"rho_lower_bound needs: {', '.join(missing)}")
    if k.sigma <= 0:
        raise ValueError("sigma must be > 0")
    eta, a, s = params.eta, params.alpha, k.sigma
    q = eta / (eta - 1.0)
    terms = [_pow(4.0 * k.M_F**2 / s**2, eta)]
    if params.delta_prime is not None:
        terms.append(_pow(48.0 * (params.delta_prime + 1.0) * k.L_f / (a * s**2), q))
    terms.append(
        _pow(48.0 * (params.delta + 1.0) * (2.0 * k.M_F + s) * k.M_f * k.L_F / (a * s**4), q)
    )
    terms.append(3.0 * k.rho0)
    num = k.M_f * (2.0 * k.M_F + s) + 2.0 * params.delta * k.M_f * k.L_F * D_S
    terms.append(k.rho0 + (num / (math.sqrt(2.0) * s * (2.0 * k.M_F + s))) ** 2)
    return float(max(terms))


def gamma_of_beta(beta, rho, constants: InstanceConstants):
    """``Gamma(beta)``, the gradient-bound coefficient."""
    k = constants
    return (k.M_F + 1.0 / rho) * (
        k.M_f * k.L_F + k.M_F * k.L_f + (3.0 * k.M_F + k.sigma) * beta
    ) / k.sigma**2 + 2.0 * k.M_F * (rho * k.M_F + 1.0)


def gamma_max(betas, rho, constants: InstanceConstants):
    betas = [b for b in betas if np.isfinite(b)]
    return max(gamma_of_beta(b, rho, constants) for b in betas)


def lpsi_bound(F_values, lams, rho, constants: InstanceConstants):
    """``max L_F ||lam + rho F(x)|| + M_F (2 + rho M_F)`` over the given pairs."""
    F_values = np.atleast_2d(np.asarray(F_values, dtype=float))
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    if F_values.size == 0:
        raise ValueError("need at least one point")
    w = np.linalg.norm(lams + rho * F_values, axis=1)
    k = constants
    return float(np.max(k.L_F * w + k.M_F * (2.0 + rho * k.M_F)))


def alpha_hat(U_bar, c0, L_bar, lam0):
    lam0 = np.asarray(lam0, dtype=float)
    return 4.0 * U_bar + 4.0 * c0 - 3.0 * L_bar + 8.0 * float(lam0 @ lam0) + 3.0


# ------------------------------------------------------------ trace helpers


def diameter(trace) -> float:
    """Largest pairwise distance between recorded iterates.

    Without stored iterates the path length (an upper bound) is returned.
    """
    if any(r.x is None for r in trace):
        return float(sum(r.dx_norm for r in trace[1:]))
    X = np.array([r.x for r in trace])
    if len(X) < 2:
        return 0.0
    return float(pdist(X).max())


def trajectory_constants(
    problem: NLPOracle,
    trace,
    rho: float,
    rho0: float = 0.0,
    U_bar=None,
    L_bar=None,
    c0=None,
) -> InstanceConstants:
    """Assumption constants evaluated over the visited iterates.

    ``U_bar`` defaults to the largest ``f`` among iterates with
    ``||F|| <= 1``, ``L_bar`` to the smallest ``f + rho0/2 ||F||^2`` seen and
    ``c0`` to ``rho ||F(x_0)||^2`` (floored at 1e-12). All are flagged as
    trajectory estimates unless passed in.
    """
    X = np.array([r.x for r in trace])
    k = estimate_constants(problem, X if len(X) > 1 else np.vstack([X, X]))
    est = "trajectory-estimated"
    prov = dict(k.provenance)
    f = np.array([r.f for r in trace])
    feas = np.array([r.feas_norm for r in trace])
    if U_bar is None:
        sel = feas <= 1.0
        U_bar = float(f[sel].max()) if sel.any() else float(f.max())
        prov["U_bar"] = est
    else:
        prov["U_bar"] = "user-supplied"
    if L_bar is None:
        L_bar = float(np.min(f + 0.5 * rho0 * feas**2))
        prov["L_bar"] = est
    else:
        prov["L_bar"] = "user-supplied"
    if c0 is None:
        c0 = max(rho * feas[0] ** 2, 1e-12)
        prov["c0"] = est
    else:
        prov["c0"] = "user-supplied"
    prov["rho0"] = "user-supplied"
    return InstanceConstants(
        M_f=k.M_f, L_f=k.L_f, M_F=k.M_F, L_F=k.L_F, sigma=k.sigma,
        rho0=rho0, U_bar=U_bar, L_bar=L_bar, c0=c0, provenance=prov,
    )


def _gammas(trace, rho, constants, eta, gammas):
    if gammas is not None:
        g = np.asarray(gammas, dtype=float)
        if g.shape != (len(trace),):
            raise ValueError("need one gamma per trace record")
        return g
    if constants is None:
        raise ValueError("either gammas or constants must be given")
    return np.array(
        [gamma_k(r.beta, rho, eta, constants) if np.isfinite(r.beta) else np.nan for r in trace]
    )


@dataclass(frozen=True)
class LyapunovRecord:
    k: int
    gamma: float
    P: float
    dP: float = math.nan
    certified_decrease_bound: float = math.nan
    decrease_ok: bool = True
    lower_bound_ok: bool = True


def lyapunov_trace(
    trace,
    rho: Optional[float] = None,
    constants: Optional[InstanceConstants] = None,
    gammas=None,
    eta: float = 2.0,
    L_bar: Optional[float] = None,
) -> list:
    """Lyapunov values ``P_k = L_rho(x_k, lam_k) + gamma_k/2 ||dx_k||^2``.

    ``gammas`` (one per record, index 0 unused) overrides the formula
    ``gamma_k(beta_k)``. Each record also reports whether
    ``P_{k+1} - P_k <= -gamma_{k+1}/4 ||dx_{k+1}||^2 - gamma_k/4 ||dx_k||^2``
    held, and whether ``P_k >= L_bar - 1`` when ``L_bar`` is known.
    """
    if len(trace) < 2:
        raise ValueError("trace must hold at least two records")
    g = _gammas(trace, rho, constants, eta, gammas)
    if L_bar is None and constants is not None:
        L_bar = constants.L_bar
    P = [math.nan] + [
        trace[j].aug_lag + 0.5 * g[j] * trace[j].dx_norm ** 2 for j in range(1, len(trace))
    ]
    out = []
    for j in range(1, len(trace)):
        lb_ok = True if L_bar is None else bool(P[j] >= L_bar - 1.0 - ABS_FLOOR)
        if j + 1 < len(trace):
            dP = P[j + 1] - P[j]
            bound = -0.25 * g[j + 1] * trace[j + 1].dx_norm ** 2 - 0.25 * g[j] * trace[j].dx_norm ** 2
            ok = bool(_leq(dP, bound, scale=1e3 * abs(P[j])))
        else:
            dP = bound = math.nan
            ok = True
        out.append(LyapunovRecord(j, float(g[j]), float(P[j]), dP, bound, ok, lb_ok))
    return out


def feasibility_envelope_check(trace, rho0: float, a_hat: float) -> list:
    """Per-record test of ``f(x_k) + rho0/2 ||F(x_k)||^2 <= alpha_hat``."""
    return [bool(_leq(r.f + 0.5 * rho0 * r.feas_norm**2, a_hat)) for r in trace]


# ---------------------------------------------------- inequality checks


@dataclass(frozen=True)
class Check:
    k: int
    lhs: float
    rhs: float
    ok: bool

    @property
    def margin(self) -> float:
        return _margin(self.lhs, self.rhs)


def check_eq2(trace) -> list:
    """Subproblem optimality identity residual against ``1e-6 (1 + ||grad f||)``."""
    return [
        Check(r.k, r.eq2_residual, 1e-6 * r.eq2_scale, bool(r.eq2_residual <= 1e-6 * r.eq2_scale))
        for r in trace[1:]
    ]


def check_descent(trace, rho: float, alpha: float) -> list:
    """Primal descent of ``L_rho`` in the sigma-free form.

    ``L(x_{k+1}, lam_k) - L(x_k, lam_k) <= -rho/2 ||J_k dx||^2 - alpha beta/2 ||dx||^2``
    up to ``1e-8 (1 + |L(x_k, lam_k)|)``.
    """
    out = []
    for r in trace[1:]:
        lhs = r.aug_lag_prev_dual - r.aug_lag_prev
        rhs = -0.5 * rho * r.jdx_norm**2 - 0.5 * alpha * r.beta * r.dx_norm**2
        tol = 1e-8 * (1.0 + abs(r.aug_lag_prev))
        out.append(Check(r.k, lhs, rhs + tol, bool(lhs <= rhs + tol)))
    return out


def check_dual_increment(trace, constants: InstanceConstants) -> list:
    """Multiplier-increment bounds, linear and squared forms.

    Returns a list of ``(linear_check, squared_check)`` pairs for records
    ``k >= 2`` (each needs two consecutive primal steps).
    """
    k_ = constants
    out = []
    for j in range(2, len(trace)):
        r, q = trace[j], trace[j - 1]
        a = (k_.L_f + r.beta) / k_.sigma
        b = (k_.M_f * k_.L_F + (2.0 * k_.M_F + k_.sigma) * q.beta) / k_.sigma**2
        rhs = a * r.dx_norm + b * q.dx_norm
        lin = Check(r.k, r.dlambda_norm, rhs, bool(_leq(r.dlambda_norm, rhs)))
        rhs_sq = (
            c1(r.beta, k_.L_f, k_.sigma) * r.dx_norm**2
            + c2(q.beta, k_.M_f, k_.L_F, k_.M_F, k_.sigma) * q.dx_norm**2
        )
        lhs_sq = r.dlambda_norm**2
        sq = Check(r.k, lhs_sq, rhs_sq, bool(_leq(lhs_sq, rhs_sq)))
        out.append((lin, sq))
    return out


def grad_P(problem: NLPOracle, x, lam, y, gamma, rho):
    """The four gradient blocks of ``P(x, lam, y, gamma)``."""
    Fx = problem.eval_F(x)
    gx = problem.grad_f(x) + problem.jac_F(x).T @ (lam + rho * Fx)
    d = x - y
    return gx + gamma * d, Fx, -gamma * d, 0.5 * float(d @ d)


def grad_P_norm(problem, x, lam, y, gamma, rho) -> float:
    gx, gl, gy, gg = grad_P(problem, x, lam, y, gamma, rho)
    return float(np.sqrt(gx @ gx + gl @ gl + gy @ gy + gg * gg))


def check_gradient_bound(
    trace,
    constants: InstanceConstants,
    rho: float,
    problem: Optional[NLPOracle] = None,
    gammas=None,
    eta: float = 2.0,
    D_S: Optional[float] = None,
) -> list:
    """Bounds on ``||grad L_rho||`` and ``||grad P||`` along the trace.

    Returns ``(lagrangian_check, lyapunov_check)`` pairs for records
    ``k >= 2``. When ``problem`` is omitted (or iterates are not stored)
    the Lyapunov gradient is replaced by the upper estimate
    ``||grad_x L|| + 2 gamma ||dx|| + ||F|| + ||dx||^2 / 2``.
    """
    if len(trace) < 3:
        raise ValueError("trace must hold at least three records")
    g = _gammas(trace, rho, constants, eta, gammas)
    betas = [r.beta for r in trace[1:]]
    G_max = gamma_max(betas, rho, constants)
    g_bar = float(np.nanmax(g[1:]))
    if D_S is None:
        D_S = diameter(trace)
    have_x = problem is not None and all(r.x is not None for r in trace)
    out = []
    for j in range(2, len(trace)):
        r, q = trace[j], trace[j - 1]
        lhs8 = math.hypot(r.grad_lag_x_norm, r.grad_lag_lambda_norm)
        rhs8 = gamma_of_beta(r.beta, rho, constants) * r.dx_norm + gamma_of_beta(
            q.beta, rho, constants
        ) * q.dx_norm
        c8 = Check(r.k, lhs8, rhs8, bool(_leq(lhs8, rhs8)))
        if have_x:
            lhs9 = grad_P_norm(problem, r.x, r.lam, q.x, g[j], rho)
        else:
            lhs9 = (
                r.grad_lag_x_norm + 2.0 * g[j] * r.dx_norm + r.grad_lag_lambda_norm
                + 0.5 * r.dx_norm**2
            )
        rhs9 = (G_max + D_S + 2.0 * g_bar) * (r.dx_norm + q.dx_norm)
        c9 = Check(r.k, lhs9, rhs9, bool(_leq(lhs9, rhs9)))
        out.append((c8, c9))
    return out


# ------------------------------------------------------------ rate fitting


@dataclass(frozen=True)
class RateFitResult:
    regime: str
    nu: float
    r2: float
    window: tuple
    rate: float = math.nan
    diagnostic: str = ""


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def rate_fit(values, p_star=None, c_bar=None, r2_min=0.98) -> RateFitResult:
    """Classify the decay of a Lyapunov sequence ``P_1, P_2, ...``.

    ``values`` is a sequence of floats or of :class:`LyapunovRecord`.

    ``E_k = P_k - P*`` with ``P*`` the last value unless given. The last 10%
    of the sequence is discarded. The regimes are ``finite`` (``E_k``
    reaches zero up to roundoff), ``linear`` (``log E_k`` affine in ``k``,
    ``rate`` is the contraction factor) and ``sublinear`` (``log E_k``
    affine in ``log k``, ``rate`` is the exponent); anything else, or a
    non-monotone sequence, is ``undetermined``.

    For a linear fit the exponent ``nu`` is recovered from the contraction
    ``1 / (1 + c_bar E_{k1}^(2 nu - 1))`` when ``c_bar`` is given, and
    reported as the boundary value 0.5 otherwise.
    """
    values = list(values)
    if values and hasattr(values[0], "P"):
        values = [v.P for v in values]
    P = np.asarray(values, dtype=float)
    P = P[np.isfinite(P)]
    N = len(P)
    if N < 20:
        return RateFitResult("undetermined", math.nan, math.nan, (0, N), diagnostic="fewer than 20 values")
    ps = float(P[-1]) if p_star is None else float(p_star)
    steps = np.diff(P)
    tol = 1e-12 * np.maximum(1.0, np.abs(P[:-1]))
    if np.any(steps > tol):
        worst = int(np.argmax(steps - tol)) + 1
        return RateFitResult(
            "undetermined", math.nan, math.nan, (0, N),
            diagnostic=f"P increases at position {worst}",
        )
    n_keep = N - max(1, N // 10)
    ks = np.arange(1, n_keep + 1, dtype=float)
    E = P[:n_keep] - ps
    zero = E <= 4.0 * np.finfo(float).eps * np.maximum(np.abs(P[:n_keep]), abs(ps))
    if zero.any():
        first = int(np.argmax(zero))
        return RateFitResult("finite", 0.0, 1.0, (1, first + 1), rate=0.0)
    y = np.log(E)
    slope_lin, r2_lin = _linfit(ks, y)
    slope_sub, r2_sub = _linfit(np.log(ks), y)
    window = (1, n_keep)
    if r2_lin >= r2_min and slope_lin < 0 and r2_lin >= r2_sub:
        q = math.exp(slope_lin)
        nu = 0.5
        if c_bar is not None and c_bar > 0 and E[0] != 1.0:
            t = (1.0 / q - 1.0) / c_bar
            if t > 0:
                nu = min(max(0.5 * (1.0 + math.log(t) / math.log(E[0])), 0.0), 0.5)
        return RateFitResult("linear", nu, r2_lin, window, rate=q)
    if r2_sub >= r2_min and slope_sub < 0:
        nu = (slope_sub - 1.0) / (2.0 * slope_sub)
        return RateFitResult("sublinear", nu, r2_sub, window, rate=slope_sub)
    return RateFitResult(
        "undetermined", math.nan, max(r2_lin, r2_sub), window,
        diagnostic="neither semilog nor log-log fit reaches the R^2 threshold",
    )


# --------------------------------------------------------------- summary


@dataclass
class CheckSummary:
    name: str
    passed: int
    total: int
    worst_margin: float
    notes: str = ""

    def __post_init__(self):
        self.worst_margin = float(self.worst_margin)

    @property
    def pass_rate(self) -> float:
        return self.passed / self.total if self.total else 1.0


def _summarize(name, checks, notes=""):
    checks = list(checks)
    worst = min((c.margin for c in checks), default=math.nan)
    return CheckSummary(name, sum(c.ok for c in checks), len(checks), worst, notes)


def certify(
    problem: NLPOracle,
    trace,
    rho: float,
    alpha: float,
    constants: Optional[InstanceConstants] = None,
    eta: float = 2.0,
) -> list:
    """Run every trace check and return one :class:`CheckSummary` each.

    Missing constants are evaluated over the visited iterates (exact
    curvature constants for a :class:`QCQP`).
    """
    if constants is None:
        constants = trajectory_constants(problem, trace, rho)
    D_S = diameter(trace)
    out = [
        _summarize("subproblem_optimality", check_eq2(trace)),
        _summarize("primal_descent", check_descent(trace, rho, alpha)),
    ]
    eq_assu = [Check(r.k, 0.0, 0.0, bool(r.descent_ok)) for r in trace[1:]]
    out.append(_summarize("prox_parameter_condition", eq_assu))
    if constants.sigma <= 0:
        out.append(CheckSummary("constants", 0, 1, math.nan, "sigma = 0, bounds undefined"))
        return out
    di = check_dual_increment(trace, constants)
    out.append(_summarize("dual_increment", [a for a, _ in di]))
    out.append(_summarize("dual_increment_squared", [b for _, b in di]))
    if len(trace) >= 3:
        gb = check_gradient_bound(trace, constants, rho, problem, eta=eta, D_S=D_S)
        out.append(_summarize("lagrangian_gradient_bound", [a for a, _ in gb]))
        out.append(_summarize("lyapunov_gradient_bound", [b for _, b in gb]))
    lyap = lyapunov_trace(trace, rho, constants, eta=eta)
    out.append(
        CheckSummary(
            "lyapunov_decrease",
            sum(r.decrease_ok for r in lyap),
            len(lyap),
            min((r.certified_decrease_bound - r.dP for r in lyap if np.isfinite(r.dP)), default=math.nan),
        )
    )
    if constants.L_bar is not None:
        out.append(
            CheckSummary(
                "lyapunov_lower_bound",
                sum(r.lower_bound_ok for r in lyap),
                len(lyap),
                min(r.P - (constants.L_bar - 1.0) for r in lyap),
            )
        )
    if None not in (constants.U_bar, constants.c0, constants.L_bar):
        a_hat = alpha_hat(constants.U_bar, constants.c0, constants.L_bar, trace[0].lam)
        env = feasibility_envelope_check(trace, constants.rho0, a_hat)
        worst = min(a_hat - (r.f + 0.5 * constants.rho0 * r.feas_norm**2) for r in trace)
        out.append(CheckSummary("feasibility_envelope", sum(env), len(env), worst))
    return out
