import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lalopt import bench
from lalopt.bench import BenchResult, GeneratorSpec, gen_qcqp
from lalopt.core import BacktrackingBeta, SolverConfig
from lalopt.fixtures import sphere_problem
from lalopt.model import QCQP


def row(p, s, t, status="Converged", iters=1):
    return BenchResult(p, s, status, iters, t, 0.0, 0.0, 0.0)


class TestGenerator:
    def test_bitwise_deterministic(self, tmp_path):
        spec = GeneratorSpec(10, 3, seed=42)
        for name in ("a.json", "b.json"):
            prob, x0 = gen_qcqp(spec)
            bench.write_problem(tmp_path / name, prob, x0)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_seed_changes_instance(self):
        a, _ = gen_qcqp(GeneratorSpec(10, 3, seed=1))
        b, _ = gen_qcqp(GeneratorSpec(10, 3, seed=2))
        assert not np.array_equal(a.Q, b.Q)

    def test_feasible_start(self, qcqp10):
        prob, x0 = qcqp10
        assert np.linalg.norm(prob.eval_F(x0)) <= 1e-14

    def test_infeasible_start(self):
        prob, x0 = gen_qcqp(GeneratorSpec(10, 3, seed=0, feasible_start=False))
        assert np.linalg.norm(prob.eval_F(x0)) > 1e-3

    @pytest.mark.parametrize("seed", range(5))
    def test_objective_curvature(self, seed):
        prob, _ = gen_qcqp(GeneratorSpec(12, 4, seed=seed, mu_lo=2.0, mu_hi=3.0))
        assert np.linalg.eigvalsh(prob.Q).min() >= 2.0 - 1e-12

    def test_constraint_scale(self):
        prob, _ = gen_qcqp(GeneratorSpec(8, 3, seed=0, constraint_scale=0.25))
        for i in range(3):
            A = prob.A[i] if not sp.issparse(prob.A[i]) else prob.A[i].toarray()
            assert np.linalg.norm(A, 2) <= 0.25 * (1 + 1e-12)

    def test_convex_curvature_psd(self):
        prob, _ = gen_qcqp(GeneratorSpec(8, 3, seed=0, convex_curvature=True))
        for A in prob.A:
            assert np.linalg.eigvalsh(A).min() >= -1e-12

    def test_jacobian_rank(self, qcqp10):
        prob, x0 = qcqp10
        assert np.linalg.svd(prob.jac_F(x0), compute_uv=False)[-1] > 1e-6

    def test_sparse(self):
        prob, x0 = gen_qcqp(GeneratorSpec(2000, 5, seed=0, density=0.002))
        assert sp.issparse(prob.Q)
        assert np.linalg.norm(prob.eval_F(x0)) <= 1e-12

    @pytest.mark.parametrize(
        "kw", [dict(n=3, m=4), dict(n=3, m=1, density=0.0), dict(n=3, m=1, mu_lo=2, mu_hi=1),
               dict(n=3, m=1, seed=-1)]
    )
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            GeneratorSpec(**kw)

    def test_degenerate_spec(self, monkeypatch):
        monkeypatch.setattr(bench, "SIGMA_FLOOR", math.inf)
        with pytest.raises(ValueError, match="degenerate"):
            gen_qcqp(GeneratorSpec(4, 2, seed=0))

    def test_rng_is_philox(self):
        assert isinstance(bench.make_rng(3).bit_generator, np.random.Philox)


class TestProblemFiles:
    @pytest.mark.parametrize("n,density", [(30, 1.0), (2000, 0.002)])
    def test_round_trip(self, tmp_path, n, density):
        prob, x0 = gen_qcqp(GeneratorSpec(n, 5, seed=7, density=density))
        path = tmp_path / "p.json"
        bench.write_problem(path, prob, x0)
        pf = bench.read_problem(path)
        assert pf.name == "p"
        assert np.array_equal(pf.x0, x0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.normal(size=n)
            assert abs(pf.problem.eval_f(x) - prob.eval_f(x)) <= 1e-15 * (1 + abs(prob.eval_f(x)))
            assert np.allclose(pf.problem.eval_F(x), prob.eval_F(x), rtol=1e-15, atol=1e-15)
            assert np.allclose(pf.problem.grad_f(x), prob.grad_f(x), rtol=1e-15, atol=1e-15)

    def test_format_layout(self, tmp_path):
        import json

        bench.write_problem(tmp_path / "s.json", sphere_problem(), [0.6, 0.8], [0.0])
        d = json.loads((tmp_path / "s.json").read_text())
        assert d["type"] == "qcqp" and d["n"] == 2 and d["m"] == 1
        assert set(d["objective"]) == {"Q", "p", "c"}
        assert set(d["constraints"][0]) == {"A", "b", "c"}

    def test_defaults_and_constants(self, tmp_path):
        from lalopt.model import InstanceConstants

        k = InstanceConstants(M_f=1.0, L_f=2.0, M_F=3.0, L_F=4.0, sigma=0.5)
        bench.write_problem(tmp_path / "s.json", sphere_problem(), constants=k)
        pf = bench.read_problem(tmp_path / "s.json")
        assert np.array_equal(pf.x0, [0.0, 0.0]) and np.array_equal(pf.lam0, [0.0])
        assert pf.constants.L_F == 4.0

    def test_bad_type(self, tmp_path):
        (tmp_path / "x.json").write_text('{"type": "lp", "n": 1}')
        with pytest.raises(ValueError):
            bench.read_problem(tmp_path / "x.json")

    def test_default_suite(self, tmp_path):
        paths = bench.default_suite(tmp_path, seeds=(0,), sparse=False)
        assert [p.name for p in paths] == [
            "qcqp_n10_m9_s0.json", "qcqp_n20_m13_s0.json", "qcqp_n50_m43_s0.json",
            "qcqp_n100_m91_s0.json",
        ]


def rank_deficient():
    A = np.zeros((2, 2))
    return QCQP(np.eye(2), np.zeros(2), 0.0, [(A, [1.0, 1.0], -1.0), (A, [1.0, 1.0], -1.0)])


class TestRunSuite:
    @pytest.fixture
    def two_problems(self, tmp_path):
        paths = []
        for s in (0, 1):
            prob, x0 = gen_qcqp(GeneratorSpec(6, 2, seed=s))
            paths.append(tmp_path / f"p{s}.json")
            bench.write_problem(paths[-1], prob, x0)
        return paths

    def test_cardinality_and_order(self, two_problems, tmp_path):
        res = bench.run_suite(two_problems, list(bench.default_solvers().values()),
                              trace_dir=tmp_path / "tr")
        assert [(r.problem, r.solver) for r in res] == [
            ("p0", "lal"), ("p0", "scp"), ("p1", "lal"), ("p1", "scp")
        ]
        assert len(list((tmp_path / "tr").glob("*.csv"))) == 4

    def test_parallel_matches_serial(self, two_problems):
        solvers = list(bench.default_solvers().values())
        a = bench.run_suite(two_problems, solvers, parallelism=1)
        b = bench.run_suite(two_problems, solvers, parallelism=2)
        strip = lambda r: (r.problem, r.solver, r.status, r.iters, r.f_final, r.feas_norm, r.stat_norm)
        assert [strip(r) for r in a] == [strip(r) for r in b]

    def test_sphere_row(self, tmp_path):
        # constant beta = 1 cycles on this instance; the row uses backtracking
        bench.write_problem(tmp_path / "sphere.json", sphere_problem(), [0.0, -1.0])
        lal = bench.SolverSpec("lal", "lal", SolverConfig(beta_policy=BacktrackingBeta()))
        (r,) = bench.run_suite([tmp_path / "sphere.json"], [lal])
        assert r.status == "Converged" and r.feas_norm <= 1e-5

    def test_rank_deficient_rows(self, tmp_path):
        bench.write_problem(tmp_path / "dup.json", rank_deficient())
        res = bench.run_suite([tmp_path / "dup.json"], list(bench.default_solvers().values()))
        by = {r.solver: r for r in res}
        assert by["scp"].status == "SubproblemFailure"
        assert by["lal"].iters > 0

    def test_duplicate_names(self):
        s = bench.default_solvers()["lal"]
        with pytest.raises(ValueError):
            bench.run_suite([], [s, s])

    def test_results_csv_round_trip(self, tmp_path):
        rows = [row("a", "x", 0.1), BenchResult("b", "y", "MaxIter", 7, 2.5, -1.0, 1e-3, math.nan)]
        bench.write_results_csv(rows, tmp_path / "r.csv")
        back = bench.read_results_csv(tmp_path / "r.csv")
        assert back[0] == rows[0]
        assert back[1].iters == 7 and math.isnan(back[1].stat_norm)
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header == "problem,solver,status,iters,time_s,f_final,feas_norm,stat_norm"


class TestProfile:
    def test_hand_example(self):
        res = [row("p1", "s1", 1.0), row("p1", "s2", 2.0), row("p2", "s1", 3.0), row("p2", "s2", 3.0)]
        c = {k.solver: k for k in bench.performance_profile(res, "time")}
        assert c["s1"].at(1.0) == 1.0
        assert c["s2"].at(1.0) == 0.5
        assert c["s2"].at(2.0) == 1.0
        assert c["s2"].at(1.999) == 0.5

    def test_iterations_metric(self):
        res = [row("p", "a", 9.0, iters=10), row("p", "b", 1.0, iters=20)]
        c = {k.solver: k for k in bench.performance_profile(res, "iters")}
        assert c["a"].at(1.0) == 1.0 and c["b"].at(1.5) == 0.0 and c["b"].at(2.0) == 1.0

    def test_single_solver(self):
        res = [row("p1", "s", 1.0), row("p2", "s", 5.0), row("p3", "s", 1.0, status="MaxIter")]
        with pytest.warns(RuntimeWarning):
            (c,) = bench.performance_profile(res)
        assert [f for _, f in c.points] == pytest.approx([2 / 3])

    def test_all_failed_solver(self):
        res = [row("p1", "a", 1.0), row("p1", "b", 1.0, "Diverged"),
               row("p2", "a", 2.0), row("p2", "b", 1.0, "MaxIter")]
        c = {k.solver: k for k in bench.performance_profile(res)}
        assert all(f == 0.0 for _, f in c["b"].points)

    def test_unsolved_problem_warns(self):
        res = [row("p1", "a", 1.0), row("p2", "a", 1.0, "MaxIter")]
        with pytest.warns(RuntimeWarning, match="p2"):
            (c,) = bench.performance_profile(res)
        assert c.at(1e9) == 0.5

    def test_bad_metric(self):
        with pytest.raises(ValueError):
            bench.performance_profile([row("p", "a", 1.0)], "memory")

    def test_profile_csv(self, tmp_path):
        res = [row("p1", "s1", 1.0), row("p1", "s2", 2.0)]
        bench.write_profile_csv(bench.performance_profile(res), tmp_path / "pr.csv")
        lines = (tmp_path / "pr.csv").read_text().splitlines()
        assert lines[0] == "solver,tau,fraction"
        assert "s2,2.0,1.0" in lines


statuses = st.sampled_from(["Converged", "Converged", "MaxIter", "Diverged"])


@st.composite
def tables(draw):
    n_p = draw(st.integers(1, 6))
    n_s = draw(st.integers(1, 4))
    out = []
    for p in range(n_p):
        for s in range(n_s):
            t = draw(st.floats(1e-3, 1e3))
            out.append(row(f"p{p}", f"s{s}", t, draw(statuses)))
    return out


@settings(max_examples=100, deadline=None)
@given(tables())
def test_profile_properties(res):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        curves = bench.performance_profile(res)
    n_p = len({r.problem for r in res})
    for c in curves:
        fr = [f for _, f in c.points]
        taus = [t for t, _ in c.points]
        assert taus == sorted(taus) and taus[0] == 1.0
        assert all(0.0 <= f <= 1.0 for f in fr)
        assert all(b >= a for a, b in zip(fr, fr[1:]))
        solved = sum(r.solved for r in res if r.solver == c.solver)
        assert fr[-1] == pytest.approx(solved / n_p)
