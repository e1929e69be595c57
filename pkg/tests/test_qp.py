import numpy as np
import pytest

from triwalk.qp import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    ActiveSetSolver,
    ControlSolverError,
    QpProblem,
    kkt_residual,
)

from oracles import solve_qp_by_enumeration


def random_problem(rng, n=5, m=8):
    """Random strictly feasible PD problem of the given size."""
    G = rng.normal(size=(n, n))
    H = G.T @ G + n * np.eye(n)
    f = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    z_feas = rng.normal(size=n) * 0.3
    b = A @ z_feas + rng.uniform(0.05, 1.0, size=m)
    return QpProblem(H=H, f=f, A_ineq=A, b_ineq=b)


@pytest.fixture
def solver():
    return ActiveSetSolver()


class TestBasics:
    def test_unconstrained_quadratic(self, solver):
        p = QpProblem(H=np.eye(2), f=np.array([-2.0, 0.0]),
                      A_ineq=np.zeros((0, 2)), b_ineq=np.zeros(0))
        sol = solver.solve(p)
        assert sol.status == STATUS_OPTIMAL
        np.testing.assert_allclose(sol.z, [2.0, 0.0], atol=1e-12)
        assert sol.objective == pytest.approx(-2.0)

    def test_active_bound(self, solver):
        p = QpProblem(H=np.eye(1), f=np.array([-2.0]),
                      A_ineq=np.array([[1.0]]), b_ineq=np.array([0.5]))
        sol = solver.solve(p)
        assert sol.status == STATUS_OPTIMAL
        assert sol.z[0] == pytest.approx(0.5, abs=1e-12)
        assert sol.active_set == (0,)

    def test_infeasible_detected(self, solver):
        p = QpProblem(H=np.eye(1), f=np.zeros(1),
                      A_ineq=np.array([[1.0], [-1.0]]), b_ineq=np.array([0.0, -1.0]))
        sol = solver.solve(p)
        assert sol.status == STATUS_INFEASIBLE

    def test_non_pd_hessian_rejected(self, solver):
        p = QpProblem(H=np.array([[1.0, 0.0], [0.0, -1.0]]), f=np.zeros(2),
                      A_ineq=np.zeros((0, 2)), b_ineq=np.zeros(0))
        with pytest.raises(ControlSolverError):
            solver.solve(p)

    def test_asymmetric_hessian_rejected(self, solver):
        p = QpProblem(H=np.array([[1.0, 0.5], [0.0, 1.0]]), f=np.zeros(2),
                      A_ineq=np.zeros((0, 2)), b_ineq=np.zeros(0))
        with pytest.raises(ValueError):
            solver.solve(p)

    def test_max_iterations_status(self, solver):
        rng = np.random.default_rng(3)
        p = random_problem(rng, n=6, m=12)
        p.b_ineq -= 2.0  # push several constraints active
        sol = solver.solve(p, max_iter=1)
        assert sol.status != STATUS_OPTIMAL


class TestAgainstEnumeration:
    @pytest.mark.parametrize("seed", range(40))
    def test_matches_oracle(self, solver, seed):
        rng = np.random.default_rng(1000 + seed)
        p = random_problem(rng, n=5, m=8)
        sol = solver.solve(p)
        z_ref, obj_ref = solve_qp_by_enumeration(p.H, p.f, p.A_ineq, p.b_ineq)
        assert sol.status == STATUS_OPTIMAL
        assert sol.objective == pytest.approx(obj_ref, abs=1e-6)
        np.testing.assert_allclose(sol.z, z_ref, atol=1e-6)
        assert sol.kkt_residual < 1e-8
        assert kkt_residual(p, sol.z) < 1e-8

    def test_oracle_solutions_have_small_residual(self, solver):
        rng = np.random.default_rng(42)
        for _ in range(10):
            p = random_problem(rng, n=4, m=7)
            z_ref, _ = solve_qp_by_enumeration(p.H, p.f, p.A_ineq, p.b_ineq)
            assert kkt_residual(p, z_ref) < 1e-8


class TestKktResidual:
    def test_unconstrained_minimum(self):
        rng = np.random.default_rng(5)
        p = random_problem(rng, n=4, m=6)
        z_star = np.linalg.solve(p.H, -p.f)
        if np.all(p.A_ineq @ z_star <= p.b_ineq):
            assert kkt_residual(p, z_star) < 1e-12

    def test_perturbed_optimum_nonzero(self, solver):
        rng = np.random.default_rng(6)
        p = random_problem(rng, n=4, m=6)
        sol = solver.solve(p)
        assert kkt_residual(p, sol.z + 0.1) > 1e-3


class TestInvariants:
    def test_objective_beats_random_feasible_points(self, solver):
        rng = np.random.default_rng(11)
        p = random_problem(rng, n=5, m=8)
        sol = solver.solve(p)
        count = 0
        while count < 1000:
            cand = sol.z + rng.normal(size=5) * rng.uniform(0.01, 2.0)
            if np.all(p.A_ineq @ cand <= p.b_ineq):
                obj = 0.5 * cand @ p.H @ cand + p.f @ cand
                assert obj >= sol.objective - 1e-9
                count += 1

    def test_row_rescaling_invariance(self, solver):
        rng = np.random.default_rng(12)
        p = random_problem(rng, n=5, m=8)
        sol = solver.solve(p)
        scale = rng.uniform(0.1, 10.0, size=8)
        p2 = QpProblem(H=p.H, f=p.f, A_ineq=p.A_ineq * scale[:, None], b_ineq=p.b_ineq * scale)
        sol2 = solver.solve(p2)
        np.testing.assert_allclose(sol2.z, sol.z, atol=1e-8)

    def test_bit_identical_determinism(self, solver):
        rng = np.random.default_rng(13)
        p = random_problem(rng, n=6, m=10)
        z1 = solver.solve(p).z
        z2 = solver.solve(p).z
        assert np.array_equal(z1, z2)


class TestSoftRows:
    def test_large_penalty_approaches_hard(self, solver):
        p_hard = QpProblem(H=np.eye(1), f=np.array([-2.0]),
                           A_ineq=np.array([[1.0]]), b_ineq=np.array([0.5]))
        p_soft = QpProblem(H=np.eye(1), f=np.array([-2.0]),
                           A_ineq=np.array([[1.0]]), b_ineq=np.array([0.5]),
                           soft=np.array([True]), soft_penalty=1e9)
        z_hard = solver.solve(p_hard).z[0]
        z_soft = solver.solve(p_soft).z[0]
        assert z_soft == pytest.approx(z_hard, abs=1e-6)

    def test_soft_row_yields_to_objective(self, solver):
        # Weak penalty: minimiser sits between the bound and the unconstrained optimum.
        p = QpProblem(H=np.eye(1), f=np.array([-2.0]),
                      A_ineq=np.array([[1.0]]), b_ineq=np.array([0.5]),
                      soft=np.array([True]), soft_penalty=1.0)
        sol = solver.solve(p)
        assert 0.5 < sol.z[0] < 2.0
        assert sol.slacks is not None and sol.slacks[0] > 0.0

    def test_soft_rows_make_problem_feasible(self, solver):
        p = QpProblem(H=np.eye(1), f=np.zeros(1),
                      A_ineq=np.array([[1.0], [-1.0]]), b_ineq=np.array([0.0, -1.0]),
                      soft=np.array([True, True]), soft_penalty=1e6)
        sol = solver.solve(p)
        assert sol.status == STATUS_OPTIMAL


class TestWarmStart:
    def test_warm_start_reaches_same_solution_faster(self, solver):
        rng = np.random.default_rng(21)
        p = random_problem(rng, n=6, m=12)
        p.b_ineq -= 0.04  # tighten so several rows go active, staying feasible
        cold = solver.solve(p)
        assert cold.status == STATUS_OPTIMAL
        warm = solver.solve(p, warm_start=cold.active_set)
        np.testing.assert_allclose(warm.z, cold.z, atol=1e-9)
        assert warm.iterations <= cold.iterations

    def test_stale_warm_start_is_harmless(self, solver):
        rng = np.random.default_rng(22)
        p = random_problem(rng, n=5, m=8)
        sol = solver.solve(p, warm_start=(0, 3, 7, 99, -1))
        z_ref, obj_ref = solve_qp_by_enumeration(p.H, p.f, p.A_ineq, p.b_ineq)
        assert sol.objective == pytest.approx(obj_ref, abs=1e-8)
