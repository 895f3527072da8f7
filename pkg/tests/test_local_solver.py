import numpy as np
import pytest

from flexaladin.errors import CapabilityError, LocalSolveError
from flexaladin.local_solver import (
    BfgsMemory,
    DampedBfgs,
    ExactHessian,
    FixedMatrix,
    ScalarSchedule,
    LocalSolveReport,
    evaluate_gradient_consensus,
    evaluate_gradient_resource,
    solve_local_consensus,
    solve_local_resource,
    update_hessian,
)
from flexaladin.objectives import (
    AbsDeviationObjective,
    QuadraticObjective,
    TrigQuadraticObjective,
)


def quad_shift(center):
    return QuadraticObjective(1.0, -center, 0.5 * center**2)


class TestUpdateHessian:
    def test_exact_constant_quadratic(self):
        f = quad_shift(2.0)
        B = update_hessian(ExactHessian(), f, [7.0], None, k=1)
        assert B[0, 0] == pytest.approx(1.0)

    def test_exact_clamps_indefinite(self):
        f = TrigQuadraticObjective(1.0, 1.5, 0.0)
        B = update_hessian(ExactHessian(epsilon_spd=1e-4), f, [0.0], None, k=1)
        assert B[0, 0] == pytest.approx(1e-4, rel=1e-10)

    def test_scalar_schedule_value(self):
        pol = ScalarSchedule(beta0=1.0, exponent=0.5)
        B = update_hessian(pol, quad_shift(0.0), [0.0], None, k=4)
        assert B[0, 0] == pytest.approx(2.0)

    def test_exact_rejects_nonsmooth(self):
        with pytest.raises(CapabilityError):
            update_hessian(ExactHessian(), AbsDeviationObjective(0.0), [0.0], None, k=1)

    def test_fixed_matrix_rejects_indefinite(self):
        with pytest.raises(ValueError):
            FixedMatrix([[0.0]])
        with pytest.raises(ValueError):
            FixedMatrix([[1.0, 0.5], [0.0, 1.0]])

    @pytest.mark.parametrize("policy_name", ["exact", "fixed", "schedule", "bfgs"])
    def test_spd_floor_randomized(self, policy_name):
        rng = np.random.default_rng(11)
        eps = 1e-4
        for trial in range(100):
            n = int(rng.integers(1, 4))
            f = TrigQuadraticObjective(
                0.5 + rng.random(), 3.0 * rng.standard_normal(), 0.0, dimension=n
            )
            x = 2.0 * rng.standard_normal(n)
            memory = None
            if policy_name == "exact":
                pol = ExactHessian(epsilon_spd=eps)
            elif policy_name == "fixed":
                M = rng.standard_normal((n, n))
                pol = FixedMatrix(M @ M.T + (eps + rng.random()) * np.eye(n), epsilon_spd=eps)
            elif policy_name == "schedule":
                pol = ScalarSchedule(beta0=10.0 ** rng.uniform(-6, 1), epsilon_spd=eps)
            else:
                pol = DampedBfgs(np.eye(n), epsilon_spd=eps)
                memory = BfgsMemory()
                update_hessian(pol, f, rng.standard_normal(n), None, k=1, memory=memory)
            B_prev = np.eye(n)
            B = update_hessian(pol, f, x, B_prev, k=int(rng.integers(1, 50)), memory=memory)
            np.testing.assert_allclose(B, B.T, atol=1e-14)
            assert np.linalg.eigvalsh(B)[0] >= eps - 1e-12

    def test_bfgs_learns_quadratic_curvature(self):
        # On a quadratic, secant pairs satisfy y = Q s, so B s -> Q s.
        rng = np.random.default_rng(5)
        Q = np.array([[3.0, 1.0], [1.0, 2.0]])
        f = QuadraticObjective(Q, [0.0, 0.0])
        pol = DampedBfgs(np.eye(2))
        mem = BfgsMemory()
        B = None
        for _ in range(40):
            x = rng.standard_normal(2)
            B = update_hessian(pol, f, x, B, k=1, memory=mem)
        s = rng.standard_normal(2)
        assert np.linalg.norm(B @ s - Q @ s) <= 1e-6 * np.linalg.norm(Q @ s)


class TestLocalConsensusSolve:
    def test_closed_form_shifted(self):
        rep = solve_local_consensus(quad_shift(2.0), 0.0, 0.0, [[1.0]])
        assert rep.x_plus[0] == pytest.approx(1.0, abs=1e-14)

    def test_all_zero_data(self):
        rep = solve_local_consensus(quad_shift(0.0), 0.0, 0.0, [[1.0]])
        assert rep.x_plus[0] == pytest.approx(0.0, abs=1e-14)

    def test_offset_dual_and_center(self):
        rep = solve_local_consensus(quad_shift(0.0), 1.0, 1.0, [[1.0]])
        assert rep.x_plus[0] == pytest.approx(0.0, abs=1e-14)

    def test_newton_on_nonconvex_with_dominating_prox(self):
        f = TrigQuadraticObjective(1.0, 1.5, 2.0)
        rep = solve_local_consensus(f, 0.3, 1.7, [[2.0]], tol=1e-12)
        assert rep.stationarity_residual <= 1e-12
        assert rep.newton_iters >= 1

    def test_nonsmooth_rejected(self):
        with pytest.raises(CapabilityError):
            solve_local_consensus(AbsDeviationObjective(0.0), 0.0, 0.0, [[1.0]])

    def test_nonconvergence_carries_best_iterate(self):
        f = TrigQuadraticObjective(1.0, 1.5, 0.0)
        with pytest.raises(LocalSolveError) as exc:
            solve_local_consensus(f, 0.0, 0.5, [[2.0]], tol=1e-12, max_iters=1)
        assert exc.value.best_x is not None
        assert exc.value.residual is not None

    def test_closed_form_vs_newton_on_quadratics(self):
        # same quadratic routed through both paths must agree to 1e-10
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = int(rng.integers(1, 4))
            fq = QuadraticObjective(np.diag(1.0 + rng.random(n)), rng.standard_normal(n))
            lam, y = rng.standard_normal(n), rng.standard_normal(n)
            B = np.diag(0.5 + rng.random(n))
            closed = solve_local_consensus(fq, lam, y, B).x_plus

            class _NoClosedForm(TrigQuadraticObjective):
                pass

            proxy = _NoClosedForm(1.0, 0.0, 0.0, dimension=n)
            proxy.subgradient = fq.subgradient  # type: ignore[method-assign]
            proxy.hessian = fq.hessian  # type: ignore[method-assign]
            proxy.value = fq.value  # type: ignore[method-assign]
            newton = solve_local_consensus(proxy, lam, y, B, tol=1e-13).x_plus
            assert np.linalg.norm(closed - newton) <= 1e-10


class TestLocalResourceSolve:
    def test_trivial(self):
        rep = solve_local_resource(quad_shift(0.0), 0.0, 0.0, [[1.0]], [[1.0]])
        assert rep.x_plus[0] == pytest.approx(0.0, abs=1e-14)

    def test_negative_dual(self):
        rep = solve_local_resource(quad_shift(0.0), -1.0, 1.0, [[1.0]], [[1.0]])
        assert rep.x_plus[0] == pytest.approx(1.0, abs=1e-14)

    def test_shifted_with_dual(self):
        rep = solve_local_resource(quad_shift(2.0), 1.0, 0.0, [[1.0]], [[1.0]])
        assert rep.x_plus[0] == pytest.approx(0.5, abs=1e-14)


class TestGradientRecovery:
    def test_consensus_examples(self):
        assert evaluate_gradient_consensus([[1.0]], 0.0, 1.0, 0.0)[0] == pytest.approx(-1.0)
        assert evaluate_gradient_consensus([[1.0]], 0.7, 0.7, 0.0)[0] == pytest.approx(0.0)
        assert evaluate_gradient_consensus([[2.0]], 1.0, 0.0, 1.0)[0] == pytest.approx(1.0)

    def test_resource_examples(self):
        assert evaluate_gradient_resource([[1.0]], 0.0, 0.0, [[1.0]], 0.0)[0] == pytest.approx(0.0)
        assert evaluate_gradient_resource([[1.0]], 1.0, 1.0, [[1.0]], -1.0)[0] == pytest.approx(1.0)
        assert evaluate_gradient_resource([[1.0]], 0.0, 0.5, [[1.0]], 1.0)[0] == pytest.approx(-1.5)

    @pytest.mark.parametrize("seed", range(6))
    def test_gradient_consistency_after_solve(self, seed):
        rng = np.random.default_rng(300 + seed)
        n = int(rng.integers(1, 4))
        tol = 1e-12
        fs = [
            QuadraticObjective(np.diag(1.0 + rng.random(n)), rng.standard_normal(n)),
            TrigQuadraticObjective(1.0 + rng.random(), rng.standard_normal(), 0.0, dimension=n),
        ]
        for f in fs:
            lam, y = rng.standard_normal(n), rng.standard_normal(n)
            B = np.diag(1.5 + rng.random(n))
            rep = solve_local_consensus(f, lam, y, B, tol=tol)
            g = evaluate_gradient_consensus(B, y, rep.x_plus, lam)
            assert np.linalg.norm(g - f.subgradient(rep.x_plus)) <= 10 * tol

    @pytest.mark.parametrize("seed", range(4))
    def test_gradient_consistency_resource(self, seed):
        rng = np.random.default_rng(400 + seed)
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        f = QuadraticObjective(np.diag(1.0 + rng.random(n)), rng.standard_normal(n))
        A = rng.standard_normal((m, n))
        lam, y = rng.standard_normal(m), rng.standard_normal(n)
        B = np.diag(1.0 + rng.random(n))
        rep = solve_local_resource(f, lam, y, A, B, tol=1e-12)
        g = evaluate_gradient_resource(B, y, rep.x_plus, A, lam)
        assert np.linalg.norm(g - f.subgradient(rep.x_plus)) <= 1e-11
