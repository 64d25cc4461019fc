"""
Tests for constraint evaluation, sensitivities and the MMA driver.

The sensitivity checks compare the self-adjoint gradients against central
finite differences of the full solve, with and without the filter chain.
"""

import numpy as np
import pytest

from lib.errors import DegenerateDesignError, OptimizationError, StaleSolutionError
from lib.filters import FilterChain, FilterParams
from lib.fem import MaterialLaw
from lib.homogenize import HomogenizedTensors, homogenize
from lib.mesh import build_structured_mesh
from lib.optimizer import (
    CONSTRAINT_NAMES,
    ConstraintVector,
    DesignCallbacks,
    _split_bounds,
    constraint_values,
    evaluate_constraints,
    kkt_residual,
    mass,
    optimize,
    sensitivities,
)
from physics.elastic import elastic_constitutive


class TestConstraints:
    """Tests for the constraint vector."""

    def test_order(self, law):
        """Test (E1111, E1212, E2222/E1111, k11, k22/k11)."""
        tensors = HomogenizedTensors(E=elastic_constitutive(law), k=np.diag([1.0, 0.5]))
        D = elastic_constitutive(law)
        assert np.allclose(constraint_values(tensors), [D[0, 0], D[2, 2], 1.0, 1.0, 0.5])
        assert len(CONSTRAINT_NAMES) == 5

    def test_zero_denominator(self, law):
        """Test that E1111 = 0 raises DegenerateDesignError."""
        E = elastic_constitutive(law)
        E[0, 0] = 0.0
        with pytest.raises(DegenerateDesignError):
            constraint_values(HomogenizedTensors(E=E, k=np.eye(2)))

    def test_relative_violation(self):
        """Test violations relative to the violated bound."""
        vector = ConstraintVector(
            values=np.array([0.1, 0.5, 0.3]),
            lower=np.array([0.2, 0.0, 0.0]),
            upper=np.array([1.0, 0.4, 1.0]),
        )
        assert np.allclose(vector.relative_violation(), [0.5, 0.25, 0.0])
        assert not vector.satisfied()
        assert vector.satisfied(slack=0.5)

    def test_unordered_bounds(self):
        """Test that lower > upper raises ValueError."""
        with pytest.raises(ValueError):
            ConstraintVector(np.zeros(5), np.ones(5), np.zeros(5))

    def test_evaluate_full_material(self, mesh4, law):
        """Test the constraint vector of the bulk material."""
        vector = evaluate_constraints(mesh4, np.ones(mesh4.n_vertices), law)
        D = elastic_constitutive(law)
        assert np.allclose(vector.values, [D[0, 0], D[2, 2], 1.0, 1.0, 1.0], atol=1e-10)
        assert set(vector.to_dict()) == set(CONSTRAINT_NAMES)

    def test_mass(self, mesh8):
        """Test that mass integrates the P1 density."""
        rho = 0.5 + 0.25 * mesh8.vertices[:, 0]
        assert mass(mesh8, rho) == pytest.approx(0.625)


class TestSensitivities:
    """Finite-difference checks of the design gradients."""

    @pytest.fixture
    def x0(self, mesh8, rng):
        return rng.uniform(0.3, 0.7, size=mesh8.n_masters)

    @pytest.mark.parametrize("filtered", [False, True])
    def test_jacobian_matches_finite_difference(self, mesh8, law, rng, x0, filtered):
        """Test directional derivatives of J and C in 20 random directions."""
        chain = (
            FilterChain(mesh8, FilterParams(tau=0.05, beta=5.0), rho_min=1e-4)
            if filtered
            else None
        )
        callbacks = DesignCallbacks(mesh8, law, chain=chain, parallel=False)
        g0, jac = callbacks.gradients(x0)
        assert jac.shape == (5, mesh8.n_masters)

        h = 1e-6
        for _ in range(20):
            v = rng.normal(size=mesh8.n_masters)
            c_plus = callbacks.constraints(x0 + h * v).copy()
            j_plus = callbacks.objective(x0 + h * v)
            c_minus = callbacks.constraints(x0 - h * v).copy()
            j_minus = callbacks.objective(x0 - h * v)
            assert np.allclose(jac @ v, (c_plus - c_minus) / (2 * h), rtol=1e-5, atol=1e-9)
            assert g0 @ v == pytest.approx((j_plus - j_minus) / (2 * h), rel=1e-6, abs=1e-10)

    def test_mass_gradient_is_lumped_area(self, mesh8, law, x0):
        """Test that without filtering the mass gradient folds the lumped areas."""
        callbacks = DesignCallbacks(mesh8, law, parallel=False)
        g0, _ = callbacks.gradients(x0)
        assert g0.sum() == pytest.approx(1.0)
        assert np.all(g0 > 0)

    def test_stiffness_rows_scale_with_young_modulus(self, mesh8, law, x0):
        """Test that E = 10 scales the stiffness rows by 10 and leaves the rest unchanged."""
        _, jac = DesignCallbacks(mesh8, law, parallel=False).gradients(x0)
        _, stiff = DesignCallbacks(mesh8, MaterialLaw(E=10.0), parallel=False).gradients(x0)
        assert np.allclose(stiff[:2], 10.0 * jac[:2], rtol=1e-9, atol=1e-14)
        assert np.allclose(stiff[2:], jac[2:], rtol=1e-9, atol=1e-14)

    def test_ratio_gradients_orthogonal_to_uniform_change(self, mesh8, law):
        """Test that ratio constraints do not change under a uniform density change."""
        _, jac = DesignCallbacks(mesh8, law, parallel=False).gradients(
            np.full(mesh8.n_masters, 0.6)
        )
        ones = np.ones(mesh8.n_masters)
        assert abs(jac[2] @ ones) <= 1e-9
        assert abs(jac[4] @ ones) <= 1e-9

    def test_stale_solution(self, mesh8, periodic_density, law):
        """Test that sensitivities for a changed density raise StaleSolutionError."""
        _, elastic, thermal = homogenize(mesh8, periodic_density, law, parallel=False)
        changed = periodic_density * 0.99
        with pytest.raises(StaleSolutionError):
            sensitivities(mesh8, changed, law, (elastic, thermal))


class TestMMA:
    """Tests for optimize on small analytic problems."""

    @staticmethod
    def quadratic(n=4):
        def J(x):
            return float(np.sum(x**2))

        def C(x):
            return np.array([np.sum(x)])

        def G(x):
            return 2.0 * x, np.ones((1, n))

        return J, C, G

    def test_quadratic_with_linear_constraint(self):
        """Test min sum x^2 s.t. sum x >= 1 converges to x = 1/4."""
        J, C, G = self.quadratic()
        result = optimize(J, C, [1.0], [np.inf], G, np.full(4, 0.9), topt=1e-9, max_iter=100)
        assert np.allclose(result.x, 0.25, atol=1e-3)
        assert result.history[-1]["constraints"][0] >= 1.0 - 1e-3

    def test_box_respected(self):
        """Test that iterates stay inside [xmin, xmax]."""
        J, C, G = self.quadratic()
        result = optimize(J, C, [1.0], [np.inf], G, np.full(4, 0.9), 1e-9, 50, xmin=0.3, xmax=0.8)
        assert np.all(result.x >= 0.3)
        assert np.all(result.x <= 0.8)
        assert np.allclose(result.x, 0.3, atol=1e-3)

    def test_iteration_callback(self):
        """Test that on_iteration sees every history record."""
        J, C, G = self.quadratic()
        seen = []
        result = optimize(
            J, C, [1.0], [np.inf], G, np.full(4, 0.9), 1e-12, 5, on_iteration=seen.append
        )
        assert len(seen) == result.iterations == len(result.history)
        assert [r["iteration"] for r in seen] == list(range(1, result.iterations + 1))
        assert {"iteration", "mass", "constraints", "kkt", "feasibility"} <= set(seen[0])

    def test_nan_raises(self):
        """Test that a NaN objective raises OptimizationError."""
        _, C, G = self.quadratic()
        with pytest.raises(OptimizationError):
            optimize(lambda x: float("nan"), C, [1.0], [np.inf], G, np.full(4, 0.5), 1e-6, 5)

    def test_split_bounds(self):
        """Test signs and scaling of the one-sided inequalities."""
        index, sign, bound = _split_bounds(np.array([0.5, -np.inf]), np.array([2.0, 1.0]))
        assert index.tolist() == [0, 0, 1]
        assert np.allclose(sign, [-0.5, 0.5, 1.0])
        assert bound.tolist() == [0.5, 2.0, 1.0]

    def test_kkt_zero_at_optimum(self):
        """Test that the KKT residual vanishes at the analytic optimum."""
        x = np.full(4, 0.25)
        kkt, feasibility = kkt_residual(
            x, np.zeros(4), np.ones(4), 2.0 * x, np.array([0.0]), -np.ones((1, 4)), np.array([0.5])
        )
        assert kkt == pytest.approx(0.0, abs=1e-14)
        assert feasibility == 0.0

    def test_single_variable_lower_bound(self):
        """Test min x^2 s.t. x >= 0.5 on [0, 1] from x0 = 1 converges to 0.5."""
        result = optimize(
            lambda x: float(x[0] ** 2),
            lambda x: np.array([x[0]]),
            [0.5],
            [np.inf],
            lambda x: (2.0 * x, np.ones((1, 1))),
            np.array([1.0]),
            topt=1e-9,
            max_iter=100,
        )
        assert result.x[0] == pytest.approx(0.5, abs=1e-3)


class TestDesignProblems:
    """optimize driven by the cell design callbacks."""

    def test_unconstrained_mass_reaches_minimum_density(self, mesh8, law):
        """Test that minimizing mass with no active bounds drives every density to rho_min."""
        callbacks = DesignCallbacks(mesh8, law, parallel=False)
        result = optimize(
            callbacks.objective,
            callbacks.constraints,
            np.full(5, -np.inf),
            np.full(5, np.inf),
            callbacks.gradients,
            np.full(mesh8.n_masters, 0.5),
            topt=1e-9,
            max_iter=50,
            xmin=1e-4,
        )
        assert np.allclose(result.x, 1e-4, rtol=0.0, atol=1e-8)
        assert result.converged

    def test_stiffness_lower_bound(self, law):
        """Test that E1111 >= 0.1 from the full cell ends feasible and lighter."""
        mesh = build_structured_mesh(16)
        lower = np.array([0.1, -np.inf, -np.inf, -np.inf, -np.inf])
        upper = np.full(5, np.inf)
        callbacks = DesignCallbacks(mesh, law, parallel=False)
        result = optimize(
            callbacks.objective,
            callbacks.constraints,
            lower,
            upper,
            callbacks.gradients,
            np.ones(mesh.n_masters),
            topt=1e-6,
            max_iter=100,
            xmin=1e-4,
        )
        vector = ConstraintVector(callbacks.constraints(result.x), lower, upper)
        assert vector.satisfied(slack=0.01)
        assert callbacks.objective(result.x) < 1.0
