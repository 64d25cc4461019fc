"""
Tests for cell problems, homogenized tensors and engineering moduli.

Analytical references: the bulk material, a uniform grey density (rho^p
scaling) and a horizontal laminate whose in-plane conductivity is the
arithmetic mean of its layers.
"""

import numpy as np
import pytest

from lib.cell_problem import solve_cell_problems
from lib.errors import DegenerateTensorError, StaleSolutionError
from lib.fem import MaterialLaw
from lib.homogenize import (
    HomogenizedTensors,
    check_bounds,
    elastic_tensor,
    engineering_moduli,
    homogenize,
    homogenized_tensor,
    mutual_energy_tensor,
    solve_both,
)
from lib.mesh import build_structured_mesh
from physics.elastic import ElasticCellPhysics, elastic_constitutive
from physics.thermal import ThermalCellPhysics


@pytest.fixture
def mesh30():
    return build_structured_mesh(30)


class TestAnalyticalCells:
    """Homogenized tensors against closed-form references."""

    def test_full_material_recovers_bulk(self, mesh30, law):
        """Test that rho = 1 gives E^H = D and k^H = diag(k11, k22)."""
        tensors, _, _ = homogenize(mesh30, np.ones(mesh30.n_vertices), law, parallel=False)
        assert np.allclose(tensors.E, elastic_constitutive(law), atol=1e-10)
        assert np.allclose(tensors.k, np.eye(2), atol=1e-10)

    def test_orthotropic_conductivity(self, mesh4):
        """Test that the bulk conductivity passes through unchanged for rho = 1."""
        law = MaterialLaw(k11=2.0, k22=0.5)
        tensors, _, _ = homogenize(mesh4, np.ones(mesh4.n_vertices), law, parallel=False)
        assert np.allclose(tensors.k, np.diag([2.0, 0.5]), atol=1e-10)

    @pytest.mark.parametrize("c", [0.3, 0.7])
    def test_uniform_density_scaling(self, mesh8, law, c):
        """Test that a uniform density c scales E by c^p and k by c^s."""
        tensors, _, _ = homogenize(mesh8, np.full(mesh8.n_vertices, c), law, parallel=False)
        assert np.allclose(tensors.E, c**law.p * elastic_constitutive(law), atol=1e-12)
        assert np.allclose(tensors.k, c**law.s * np.eye(2), atol=1e-12)

    def test_horizontal_laminate(self, law):
        """Test that half-filled horizontal layers conduct ~0.5 along x and ~0 across."""
        mesh = build_structured_mesh(64)
        j = np.round(mesh.vertices[:, 1] * 64).astype(int)
        rho = mesh.periodize(np.where(j <= 32, 1.0, 1e-4))
        tensors, _, _ = homogenize(mesh, rho, law, parallel=False)
        assert tensors.k[0, 0] == pytest.approx(0.5, rel=0.02)
        assert tensors.k[1, 1] < 1e-6

    def test_stripe_laminate_exact(self, mesh8, law):
        """Test that aligned stripes have no x-fluctuation and give the exact layer means."""
        centroids = mesh8.vertices[mesh8.triangles].mean(axis=1)
        element_rho = np.where(centroids[:, 1] < 0.5, 1.0, 0.1)
        solution = solve_cell_problems(
            ThermalCellPhysics(law), mesh8, np.ones(mesh8.n_vertices), element_rho=element_rho
        )
        k = homogenized_tensor(solution)
        void = 0.1**law.s
        assert np.abs(solution.fluctuations[0]).max() < 1e-10
        assert k[0, 0] == pytest.approx(0.5 * (1.0 + void), rel=1e-10)
        assert k[1, 1] == pytest.approx(1.0 / (0.5 + 0.5 / void), rel=1e-8)
        assert abs(k[0, 1]) < 1e-12


class TestTensorProperties:
    """Symmetry, positivity and the two energy forms."""

    def test_symmetric_positive_definite(self, mesh8, periodic_density, law):
        """Test that both tensors are symmetric positive definite."""
        tensors, _, _ = homogenize(mesh8, periodic_density, law, parallel=False)
        for T in (tensors.E, tensors.k):
            assert np.allclose(T, T.T, atol=1e-12)
            assert np.linalg.eigvalsh(T).min() > 0

    def test_mutual_energy_form_agrees(self, mesh8, periodic_density, law):
        """Test that the mutual-energy form equals the energy form."""
        solution = solve_cell_problems(ElasticCellPhysics(law), mesh8, periodic_density)
        assert np.allclose(
            mutual_energy_tensor(solution), homogenized_tensor(solution), atol=1e-12
        )

    def test_check_bounds_accepts_design(self, mesh8, periodic_density, law):
        """Test that a valid design sits inside the rho_min^p sandwich."""
        tensors, _, _ = homogenize(mesh8, periodic_density, law, parallel=False)
        check_bounds(tensors, law, rho_min=1e-4)

    def test_check_bounds_rejects_stiffer_than_bulk(self, law):
        """Test that a diagonal above the bulk value raises DegenerateTensorError."""
        tensors = HomogenizedTensors(E=2.0 * elastic_constitutive(law), k=np.eye(2))
        with pytest.raises(DegenerateTensorError):
            check_bounds(tensors, law, rho_min=1e-4)


class TestEngineeringModuli:
    """Tests for engineering_moduli."""

    def test_bulk_moduli(self, law):
        """Test Ex = Ey = E and G = E / (2 (1 + nu)) for the bulk plane-stress matrix."""
        moduli = engineering_moduli(elastic_constitutive(law), np.eye(2))
        assert moduli.Ex == pytest.approx(1.0)
        assert moduli.Ey == pytest.approx(1.0)
        assert moduli.G == pytest.approx(1.0 / 2.6)
        assert moduli.k11 == 1.0

    def test_singular_tensor_raises(self):
        """Test that a singular E^H raises DegenerateTensorError."""
        E = np.diag([1.0, 1.0, 0.0])
        with pytest.raises(DegenerateTensorError):
            engineering_moduli(E, np.eye(2))

    def test_ill_conditioned_tensor_raises(self):
        """Test that a condition number above the limit raises."""
        with pytest.raises(DegenerateTensorError):
            engineering_moduli(np.diag([1.0, 1.0, 1e-14]), np.eye(2))


class TestConsistency:
    """Stale-solution detection and solve modes."""

    def test_stale_density_raises(self, mesh8, periodic_density, law):
        """Test that changing the density after the solve raises StaleSolutionError."""
        solution = solve_cell_problems(ElasticCellPhysics(law), mesh8, periodic_density)
        changed = periodic_density.copy()
        changed[0] += 0.01
        with pytest.raises(StaleSolutionError):
            elastic_tensor(mesh8, changed, law, solution)

    def test_other_mesh_raises(self, mesh4, mesh8, periodic_density, law):
        """Test that fluctuations from another mesh raise ValueError."""
        solution = solve_cell_problems(ElasticCellPhysics(law), mesh8, periodic_density)
        with pytest.raises(ValueError):
            elastic_tensor(mesh4, np.ones(mesh4.n_vertices), law, solution)

    def test_density_shape_mismatch(self, mesh4, law):
        """Test that a density of the wrong length raises ValueError."""
        with pytest.raises(ValueError):
            solve_cell_problems(ThermalCellPhysics(law), mesh4, np.ones(3))

    def test_parallel_matches_sequential(self, mesh8, periodic_density, law):
        """Test that threaded and sequential solves give identical tensors."""
        threaded, _, _ = homogenize(mesh8, periodic_density, law, parallel=True)
        sequential, _, _ = homogenize(mesh8, periodic_density, law, parallel=False)
        assert np.array_equal(threaded.E, sequential.E)
        assert np.array_equal(threaded.k, sequential.k)

    def test_element_density_override(self, mesh8, periodic_density, law):
        """Test that element_rho = 1 recovers the bulk whatever the nodal density."""
        elastic, thermal = solve_both(
            mesh8, periodic_density, law, parallel=False,
            element_rho=np.ones(mesh8.n_triangles),
        )
        assert np.allclose(homogenized_tensor(elastic), elastic_constitutive(law), atol=1e-10)
        assert np.allclose(homogenized_tensor(thermal), np.eye(2), atol=1e-10)

    @pytest.mark.parametrize("physics_class", [ElasticCellPhysics, ThermalCellPhysics])
    def test_anchor_choice_is_irrelevant(self, mesh8, periodic_density, law, physics_class):
        """Test that pinning another vertex shifts fluctuations by a constant only."""
        physics = physics_class(law)
        centre = int(np.argmin(np.linalg.norm(mesh8.vertices - 0.5, axis=1)))
        corner = solve_cell_problems(physics, mesh8, periodic_density)
        moved = solve_cell_problems(physics, mesh8, periodic_density, anchor=centre)
        shift = moved.fields() - corner.fields()
        assert np.allclose(shift, shift[:, :1, :], atol=1e-10)
        assert np.allclose(homogenized_tensor(moved), homogenized_tensor(corner), atol=1e-10)

    def test_element_density_override_shape(self, mesh4, law):
        """Test that a wrongly sized element density raises ValueError."""
        with pytest.raises(ValueError):
            solve_cell_problems(
                ThermalCellPhysics(law), mesh4, np.ones(mesh4.n_vertices), np.ones(5)
            )


class TestMonotonicity:
    """Pointwise denser designs are never softer."""

    def test_diagonals_increase_with_density(self, mesh8, law, rng):
        """Test that rho_a <= rho_b gives diag(E_a) <= diag(E_b) and diag(k_a) <= diag(k_b)."""
        for _ in range(3):
            rho_a = mesh8.expand(rng.uniform(0.1, 0.8, size=mesh8.n_masters))
            rho_b = np.minimum(rho_a + mesh8.expand(rng.uniform(0.0, 0.2, size=mesh8.n_masters)), 1.0)
            a, _, _ = homogenize(mesh8, rho_a, law, parallel=False)
            b, _, _ = homogenize(mesh8, rho_b, law, parallel=False)
            assert np.all(np.diag(a.E) <= np.diag(b.E) + 1e-14)
            assert np.all(np.diag(a.k) <= np.diag(b.k) + 1e-14)
