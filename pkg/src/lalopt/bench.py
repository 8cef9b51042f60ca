"""Random QCQP instances, problem files, suite runs and performance profiles.

Instances are drawn from ``numpy.random.Generator(Philox(seed))``. Philox
is counter based, so a seed reproduces the same stream on every platform
and numpy version that implements the algorithm.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .core import SolverConfig, ConstantBeta, BacktrackingBeta, solve, write_trace_csv
from .model import QCQP, InstanceConstants, stationarity
from .scp import ScpConfig, scp_solve

SIGMA_FLOOR = 1e-6
MAX_RESAMPLE = 10
RESULT_COLUMNS = (
    "problem", "solver", "status", "iters", "time_s", "f_final", "feas_norm", "stat_norm",
)
DENSE_SIZES = ((10, 9), (20, 13), (50, 43), (100, 91))
SPARSE_SIZES = ((1000, 500), (10000, 500))


# -------------------------------------------------------------- generator


@dataclass(frozen=True)
class GeneratorSpec:
    """Recipe for a random QCQP.

    ``Q = G'G + mu I`` with ``mu ~ U[mu_lo, mu_hi]``; each ``A_i`` is a
    random symmetric matrix with spectral norm at most ``constraint_scale`` (PSD
    when ``convex_curvature``); ``p`` and ``b_i`` are standard normal.
    With ``feasible_start`` the offsets ``c_i`` make ``F(x0) = 0``.
    """

    n: int
    m: int
    seed: int = 0
    density: float = 1.0
    mu_lo: float = 1.0
    mu_hi: float = 10.0
    constraint_scale: float = 1.0
    feasible_start: bool = True
    convex_curvature: bool = False

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ValueError("need 1 <= m <= n")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if not 0 <= self.mu_lo <= self.mu_hi:
            raise ValueError("need 0 <= mu_lo <= mu_hi")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _random_matrix(rng, rows, cols, density):
    if density >= 1.0:
        return rng.standard_normal((rows, cols))
    return sp.random(rows, cols, density=density, format="csr", random_state=rng,
                     data_rvs=rng.standard_normal)


def _scaled_symmetric(rng, n, density, scale, psd):
    B = _random_matrix(rng, n, n, density)
    M = B.T @ B if psd else 0.5 * (B + B.T)
    if sp.issparse(M):
        M = sp.csr_matrix(M)
        norm = float(abs(M).sum(axis=1).max()) if M.nnz else 0.0  # inf-norm bound
    else:
        norm = float(np.linalg.norm(M, 2))
    return M * (scale / norm) if norm > 0 else M


def gen_qcqp(spec: GeneratorSpec):
    """Draw a QCQP and starting point from ``spec``.

    Returns
    -------
    problem : QCQP
    x0 : ndarray

    Raises
    ------
    ValueError
        If ten redraws of the linear terms ``b_i`` cannot make
        ``sigma_min(J(x0)) > 1e-6``.
    """
    n, m, d = spec.n, spec.m, spec.density
    rng = make_rng(spec.seed)
    G = _random_matrix(rng, n, n, d)
    mu = rng.uniform(spec.mu_lo, spec.mu_hi)
    if sp.issparse(G):
        Q = sp.csr_matrix(G.T @ G / n + mu * sp.identity(n))
    else:
        Q = G.T @ G / n + mu * np.eye(n)
    p = rng.standard_normal(n)
    A = [_scaled_symmetric(rng, n, d, spec.constraint_scale, spec.convex_curvature) for _ in range(m)]
    x0 = rng.standard_normal(n) / math.sqrt(n)
    for _ in range(MAX_RESAMPLE):
        b = rng.standard_normal((m, n))
        J = np.array([Ai @ x0 for Ai in A]) + b
        if np.linalg.svd(J, compute_uv=False)[-1] > SIGMA_FLOOR:
            break
    else:
        raise ValueError(
            f"could not draw a constraint Jacobian with sigma_min > {SIGMA_FLOOR} "
            f"in {MAX_RESAMPLE} attempts; the spec is degenerate"
        )
    if spec.feasible_start:
        c = np.array([-0.5 * x0 @ (Ai @ x0) - bi @ x0 for Ai, bi in zip(A, b)])
    else:
        c = rng.standard_normal(m)
    return QCQP(Q, p, 0.0, list(zip(A, b, c))), x0


# ----------------------------------------------------------- problem files


def _encode_matrix(M):
    if sp.issparse(M):
        C = sp.coo_matrix(M)
        C.sum_duplicates()
        return {"shape": list(C.shape), "rows": C.row.tolist(), "cols": C.col.tolist(),
                "vals": C.data.tolist()}
    return np.asarray(M, dtype=float).tolist()


def _decode_matrix(obj, n):
    if isinstance(obj, dict):
        shape = tuple(obj.get("shape", (n, n)))
        return sp.csr_matrix(
            (np.asarray(obj["vals"], dtype=float),
             (np.asarray(obj["rows"], dtype=int), np.asarray(obj["cols"], dtype=int))),
            shape=shape,
        )
    return np.asarray(obj, dtype=float)


def problem_to_dict(problem: QCQP, x0=None, lam0=None, constants: Optional[InstanceConstants] = None) -> dict:
    d = {
        "type": "qcqp",
        "n": problem.n,
        "m": problem.m,
        "objective": {"Q": _encode_matrix(problem.Q), "p": problem.p.tolist(), "c": problem.c},
        "constraints": [
            {"A": _encode_matrix(A), "b": b.tolist(), "c": float(c)}
            for A, b, c in problem.constraints
        ],
    }
    if x0 is not None:
        d["x0"] = np.asarray(x0, dtype=float).tolist()
    if lam0 is not None:
        d["lambda0"] = np.asarray(lam0, dtype=float).tolist()
    if constants is not None:
        d["constants"] = constants.to_dict()
    return d


def write_problem(path, problem: QCQP, x0=None, lam0=None, constants=None) -> None:
    """Write a QCQP as JSON; dense matrices as nested lists, sparse as COO triplets."""
    Path(path).write_text(json.dumps(problem_to_dict(problem, x0, lam0, constants)))


@dataclass
class ProblemFile:
    problem: QCQP
    x0: np.ndarray
    lam0: np.ndarray
    constants: Optional[InstanceConstants] = None
    name: str = ""


def read_problem(path) -> ProblemFile:
    """Load a problem file; missing ``x0``/``lambda0`` default to zero."""
    path = Path(path)
    d = json.loads(path.read_text())
    if d.get("type", "qcqp") != "qcqp":
        raise ValueError(f"{path}: unsupported problem type {d.get('type')!r}")
    n = int(d["n"])
    cons = [(_decode_matrix(c["A"], n), c["b"], c["c"]) for c in d["constraints"]]
    obj = d["objective"]
    prob = QCQP(_decode_matrix(obj["Q"], n), obj["p"], obj.get("c", 0.0), cons)
    x0 = np.asarray(d.get("x0", np.zeros(n)), dtype=float)
    lam0 = np.asarray(d.get("lambda0", np.zeros(prob.m)), dtype=float)
    consts = InstanceConstants.from_dict(d["constants"]) if "constants" in d else None
    return ProblemFile(prob, x0, lam0, consts, path.stem)


def default_suite(out_dir, seeds: Sequence[int] = (0,), sparse: bool = True) -> list:
    """Write the default dense (and optionally sparse) suite to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = [(nm, 1.0) for nm in DENSE_SIZES]
    if sparse:
        sizes += [(nm, 5.0 / nm[0]) for nm in SPARSE_SIZES]
    paths = []
    for (n, m), dens in sizes:
        for s in seeds:
            prob, x0 = gen_qcqp(GeneratorSpec(n, m, seed=s, density=dens))
            path = out / f"qcqp_n{n}_m{m}_s{s}.json"
            write_problem(path, prob, x0)
            paths.append(path)
    return paths


# ----------------------------------------------------------------- suite


@dataclass(frozen=True)
class SolverSpec:
    """A named, configured solver: ``kind`` is ``"lal"`` or ``"scp"``."""

    name: str
    kind: str
    config: object = None

    def run(self, problem, x0, lam0):
        if self.kind == "lal":
            return solve(problem, x0, lam0, self.config or SolverConfig())
        if self.kind == "scp":
            return scp_solve(problem, x0, self.config or ScpConfig(), lam0)
        raise ValueError(f"unknown solver kind {self.kind!r}")


def default_solvers(rho=1e3, beta=1.0, eps1=1e-3, eps2=1e-5, max_iter=10_000) -> dict:
    return {
        "lal": SolverSpec("lal", "lal", SolverConfig(rho=rho, beta_policy=ConstantBeta(beta),
                                                     eps1=eps1, eps2=eps2, max_iter=max_iter)),
        "scp": SolverSpec("scp", "scp", ScpConfig(beta=beta, eps1=eps1, eps2=eps2,
                                                  max_iter=max_iter)),
    }


@dataclass(frozen=True)
class BenchResult:
    problem: str
    solver: str
    status: str
    iters: int
    time_s: float
    f_final: float
    feas_norm: float
    stat_norm: float

    @property
    def solved(self) -> bool:
        return self.status == "Converged"


def _run_one(task):
    pid, source, solver, trace_dir = task
    pf = read_problem(source) if isinstance(source, (str, Path)) else source
    try:
        rep = solver.run(pf.problem, pf.x0, pf.lam0)
    except Exception as exc:  # a failing run is a result, not a crash
        nan = math.nan
        return BenchResult(pid, solver.name, "SubproblemFailure", 0, nan, nan, nan, nan), repr(exc)
    if trace_dir is not None:
        write_trace_csv(rep, Path(trace_dir) / f"{pid}__{solver.name}.csv", iterates=False)
    res = stationarity(pf.problem, rep.x, rep.lam)
    return BenchResult(
        pid, solver.name, rep.status, rep.iterations, rep.wall_time,
        pf.problem.eval_f(rep.x), res.feas_norm, res.grad_lag_norm,
    ), rep.message


def run_suite(problems, solvers, parallelism: int = 1, trace_dir=None) -> list:
    """Run every solver on every problem.

    Parameters
    ----------
    problems : sequence
        Problem file paths or ``(id, ProblemFile)`` pairs.
    solvers : sequence of SolverSpec
        Names must be unique.
    parallelism : int
        Worker processes; results come back in (problem, solver) order
        whatever the value.
    trace_dir : path, optional
        Directory for per-run trace CSVs.
    """
    names = [s.name for s in solvers]
    if len(set(names)) != len(names):
        raise ValueError("solver names must be unique")
    items = []
    for p in problems:
        if isinstance(p, tuple):
            items.append(p)
        else:
            items.append((Path(p).stem, Path(p)))
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    tasks = [(pid, src, s, trace_dir) for pid, src in items for s in solvers]
    if parallelism <= 1:
        out = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            out = list(ex.map(_run_one, tasks))
    return [r for r, _ in out]


def write_results_csv(results, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([r.problem, r.solver, r.status, r.iters, repr(float(r.time_s)),
                        repr(float(r.f_final)), repr(float(r.feas_norm)), repr(float(r.stat_norm))])


def read_results_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        BenchResult(r["problem"], r["solver"], r["status"], int(r["iters"]), float(r["time_s"]),
                    float(r["f_final"]), float(r["feas_norm"]), float(r["stat_norm"]))
        for r in rows
    ]


# -------------------------------------------------------------- profiles


@dataclass(frozen=True)
class ProfileCurve:
    """Step function ``tau -> fraction of problems with ratio <= tau``."""

    solver: str
    points: tuple = field(default_factory=tuple)

    def at(self, tau: float) -> float:
        frac = 0.0
        for t, f in self.points:
            if t <= tau:
                frac = f
            else:
                break
        return frac


def performance_profile(results, metric: str = "time") -> list:
    """Performance profiles over ``time`` or ``iterations``.

    Unsuccessful runs get ratio ``inf``. Problems that no solver solved
    have no reference value; they are reported in a warning and count
    as unsolved for every solver, so each curve ends at that solver's
    solved fraction.
    """
    key = {"time": "time_s", "iters": "iters", "iterations": "iters"}.get(metric)
    if key is None:
        raise ValueError("metric must be 'time' or 'iterations'")
    results = list(results)
    problems = sorted({r.problem for r in results})
    solvers = sorted({r.solver for r in results})
    if not problems or not solvers:
        raise ValueError("need at least one problem and one solver")
    table = {(r.problem, r.solver): r for r in results}
    ratios = {s: [] for s in solvers}
    unsolved = []
    for p in problems:
        vals = {}
        for s in solvers:
            r = table.get((p, s))
            vals[s] = float(getattr(r, key)) if r is not None and r.solved else math.inf
        best = min(vals.values())
        if not math.isfinite(best):
            unsolved.append(p)
        for s in solvers:
            v = vals[s]
            if not math.isfinite(v):
                ratios[s].append(math.inf)
            elif v == best:
                ratios[s].append(1.0)
            else:
                ratios[s].append(v / best if best > 0 else math.inf)
    if unsolved:
        warnings.warn(
            f"no solver succeeded on {len(unsolved)} problem(s): {', '.join(unsolved)}",
            RuntimeWarning,
            stacklevel=2,
        )
    taus = sorted({t for rs in ratios.values() for t in rs if math.isfinite(t)} | {1.0})
    n_p = len(problems)
    curves = []
    for s in solvers:
        rs = np.array(ratios[s])
        pts = tuple((t, float(np.count_nonzero(rs <= t)) / n_p) for t in taus)
        curves.append(ProfileCurve(s, pts))
    return curves


def write_profile_csv(curves, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("solver", "tau", "fraction"))
        for c in curves:
            for t, f in c.points:
                w.writerow((c.solver, repr(float(t)), repr(float(f))))
