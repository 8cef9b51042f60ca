import numpy as np
import pytest

from lalopt.bench import GeneratorSpec, gen_qcqp
from lalopt.core import SolverConfig, solve
from lalopt.errors import SingularKKTError
from lalopt.fixtures import linear_quadratic_solution, sphere_solution
from lalopt.model import QCQP, NLPOracle
from lalopt.scp import ScpConfig, scp_solve, scp_step


class TestStep:
    @pytest.mark.parametrize("xk", [[0.0, 0.0], [3.0, -2.0], [-1.0, 5.0]])
    def test_linear_constraint_exact(self, xk):
        xk = np.array(xk)
        x, lam = scp_step(np.eye(2), np.zeros(2), xk, [xk[0] - 1.0], [[1.0, 0.0]], 1.0)
        # the prox term pulls x2 toward x_k[1] by 1/2 each step
        assert x[0] == pytest.approx(1.0, abs=1e-14)
        assert x[1] == pytest.approx(xk[1] / 2, abs=1e-14)
        # grad f + beta (x - x_k) + J' lam = 0 in the first coordinate
        assert lam[0] == pytest.approx(-(1.0 + (1.0 - xk[0])), abs=1e-13)

    def test_one_step_to_kkt_from_x2_zero(self):
        x, lam = scp_step(np.eye(2), np.zeros(2), [1.0, 0.0], [0.0], [[1.0, 0.0]], 1.0)
        assert np.allclose(x, [1.0, 0.0]) and lam == pytest.approx([-1.0])

    def test_scalar_hand_kkt(self):
        # J (x - x_k) = -F_k = 0 forces x = 1; then 2 x + lam = 0
        x, lam = scp_step(np.array([[2.0]]), np.zeros(1), [1.0], [0.0], [[1.0]], 0.0)
        assert x == pytest.approx([1.0]) and lam == pytest.approx([-2.0])

    def test_fixed_point_at_kkt(self, sphere):
        xs, ls = sphere_solution()
        x, lam = scp_step(sphere.Q, sphere.p, xs, sphere.eval_F(xs), sphere.jac_F(xs), 1.0)
        assert np.allclose(x, xs, atol=1e-14)
        assert np.allclose(lam, ls, atol=1e-13)

    def test_rank_deficient(self):
        J = np.array([[1.0, 2.0], [1.0, 2.0]])
        with pytest.raises(SingularKKTError):
            scp_step(np.eye(2), np.zeros(2), np.zeros(2), [0.0, 0.0], J, 1.0)

    def test_linearized_feasibility(self, qcqp10):
        prob, x0 = qcqp10
        rng = np.random.default_rng(5)
        for _ in range(5):
            xk = x0 + rng.normal(size=prob.n)
            F, J = prob.eval_F(xk), prob.jac_F(xk)
            x, _ = scp_step(prob.Q, prob.p, xk, F, J, 1.0)
            assert np.linalg.norm(J @ (x - xk) + F) <= 1e-8 * (1 + np.linalg.norm(F))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ScpConfig(beta=0.0)


class TestSolve:
    def test_linear_one_iteration(self, linquad):
        rep = scp_solve(linquad, [1.0, 0.0], ScpConfig(eps1=1e-12, eps2=1e-12))
        xs, ls = linear_quadratic_solution()
        assert rep.converged and rep.iterations == 1
        assert np.allclose(rep.x, xs) and np.allclose(rep.lam, ls)

    def test_sphere_generic_start(self, sphere):
        # no globalization: local contraction needs beta near the Lagrangian curvature 2 lam = 5
        xs, ls = sphere_solution()
        cfg = ScpConfig(beta=5.0, eps1=1e-12, eps2=1e-12, eps_stat=1e-10)
        rep = scp_solve(sphere, [0.2, -0.9], cfg)
        assert rep.converged
        assert np.allclose(rep.x, xs, atol=1e-6)
        assert np.allclose(rep.lam, ls, atol=1e-6)

    def test_sphere_unit_beta_cycles(self, sphere):
        rep = scp_solve(sphere, [0.2, -0.9], ScpConfig(beta=1.0, max_iter=200))
        assert rep.status == "MaxIter"

    def test_sphere_from_maximizer_is_fixed(self, sphere):
        rep = scp_solve(sphere, [0.6, 0.8], ScpConfig())
        assert np.allclose(rep.x, [0.6, 0.8])

    def test_agrees_with_lal_on_affine_constraints(self):
        rng = np.random.default_rng(11)
        G = rng.normal(size=(6, 6))
        Q = G.T @ G / 6 + np.eye(6)
        cons = [(np.zeros((6, 6)), rng.normal(size=6), rng.normal()) for _ in range(3)]
        prob = QCQP(Q, rng.normal(size=6), 0.0, cons)
        a = scp_solve(prob, np.zeros(6), ScpConfig(eps1=1e-12, eps2=1e-12, eps_stat=1e-10))
        b = solve(prob, np.zeros(6), config=SolverConfig(eps1=1e-12, eps2=1e-12, eps_stat=1e-9))
        assert a.converged and b.converged
        fa, fb = prob.eval_f(a.x), prob.eval_f(b.x)
        assert abs(fa - fb) <= 1e-6 * (1 + abs(fa))

    def test_seeded_convex_qcqp_agrees_with_lal(self):
        prob, x0 = gen_qcqp(GeneratorSpec(10, 3, seed=42, convex_curvature=True))
        a = scp_solve(prob, x0, ScpConfig(eps1=1e-9, eps2=1e-9))
        b = solve(prob, x0, config=SolverConfig(eps1=1e-9, eps2=1e-9))
        assert a.converged and b.converged
        fa, fb = prob.eval_f(a.x), prob.eval_f(b.x)
        assert abs(fa - fb) <= 1e-4 * (1 + abs(fa))

    def test_trace_schema_matches_lal(self, sphere):
        a = scp_solve(sphere, [0.2, -0.9], ScpConfig())
        b = solve(sphere, [0.2, -0.9])
        assert type(a.trace[0]) is type(b.trace[0])
        assert a.rho == 0.0

    def test_rank_deficient_reports_failure(self):
        A = np.zeros((2, 2))
        prob = QCQP(np.eye(2), np.zeros(2), 0.0, [(A, [1.0, 1.0], -1.0), (A, [1.0, 1.0], -1.0)])
        rep = scp_solve(prob, np.zeros(2))
        assert rep.status == "SubproblemFailure"
        assert "rank" in rep.message

    def test_nonquadratic_nullspace_path(self):
        prob = NLPOracle(
            2, 1,
            lambda x: np.sum(x**4) / 4 + x @ x / 2,
            lambda x: x**3 + x,
            lambda x: [x[0] + x[1] - 2.0],
            lambda x: [[1.0, 1.0]],
        )
        rep = scp_solve(prob, np.array([3.0, -1.0]), ScpConfig(eps1=1e-12, eps2=1e-12, eps_stat=1e-8))
        assert rep.converged
        # symmetric minimizer x = (1, 1); grad f = (2, 2) = -lam (1, 1)
        assert np.allclose(rep.x, [1.0, 1.0], atol=1e-6)
        assert rep.lam == pytest.approx([-2.0], abs=1e-5)
