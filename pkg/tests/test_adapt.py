"""
Tests for metric preparation and periodic remeshing.
"""

import numpy as np
import pytest

from lib.adapt import (
    IN_BAND_TARGET,
    AdaptParams,
    adapt_mesh,
    cardinality_stagnation,
    hybrid_override,
    symmetrize_periodic,
)
from lib.estimator import compute_metric, local_estimator, vertex_metric
from lib.mesh import UnitCellMesh, build_structured_mesh, element_geometry, validate_mesh
from lib.optimizer import mass

ISOTROPIC = AdaptParams(hybrid=False)


def uniform_metric(mesh: UnitCellMesh, h: float) -> np.ndarray:
    return np.tile(np.eye(2) / (h * h), (mesh.n_vertices, 1, 1))


class TestCardinalityStagnation:
    """Tests for cardinality_stagnation."""

    def test_relative_change(self, mesh4, mesh8):
        """Test |N_new - N_prev| / N_prev in both directions."""
        assert cardinality_stagnation(mesh4, mesh8) == pytest.approx(3.0)
        assert cardinality_stagnation(mesh8, mesh4) == pytest.approx(0.75)
        assert cardinality_stagnation(mesh4, mesh4) == 0.0

    def test_empty_previous_mesh(self, mesh4):
        """Test that an empty previous mesh raises ValueError."""
        empty = UnitCellMesh(mesh4.vertices, np.zeros((0, 3), dtype=np.int64), mesh4.periodic_pairs)
        with pytest.raises(ValueError):
            cardinality_stagnation(empty, mesh4)


class TestMetricPreparation:
    """Tests for the hybrid override and periodic symmetrization."""

    def test_hybrid_override(self, mesh4):
        """Test that only material vertices receive the isotropic metric."""
        metric = uniform_metric(mesh4, 0.5)
        rho = np.where(mesh4.vertices[:, 0] < 0.5, 1.0, 0.2)
        out = hybrid_override(metric, rho, rho_th=0.9, h_iso=0.1)
        assert np.allclose(out[rho > 0.9], 100.0 * np.eye(2))
        assert np.allclose(out[rho <= 0.9], 4.0 * np.eye(2))
        assert np.allclose(metric, 4.0 * np.eye(2))

    def test_symmetrize_periodic(self, mesh4, rng):
        """Test that paired vertices end up with the class average."""
        values = rng.uniform(size=(mesh4.n_vertices, 2, 2))
        out = symmetrize_periodic(mesh4, values)
        slaves, masters = mesh4.periodic_pairs.T
        assert np.allclose(out[slaves], out[masters])
        interior = np.flatnonzero(np.all((mesh4.vertices > 0) & (mesh4.vertices < 1), axis=1))
        assert np.allclose(out[interior], values[interior])
        corners = mesh4.corner_group
        assert np.allclose(out[corners[0]], values[corners].mean(axis=0))

    @pytest.mark.parametrize(
        "kwargs", [{"rho_th": 1.0}, {"rho_th": 0.0}, {"h_iso": 0.0}, {"max_iter": 0}]
    )
    def test_invalid_params(self, kwargs):
        """Test that out-of-range adaptation parameters raise ValueError."""
        with pytest.raises(ValueError):
            AdaptParams(**kwargs)


class TestAdaptMesh:
    """Tests for adapt_mesh."""

    def test_conforming_mesh_is_kept(self):
        """Test that a mesh already conforming to its metric keeps its cardinality."""
        mesh = build_structured_mesh(10)
        rho = np.full(mesh.n_vertices, 0.5)
        result = adapt_mesh(mesh, uniform_metric(mesh, 0.12), rho, ISOTROPIC)
        assert result.mesh.n_triangles == 200
        assert result.in_band >= IN_BAND_TARGET
        assert not result.best_effort

    def test_refines(self, mesh4):
        """Test that a finer metric adds triangles and keeps a valid periodic mesh."""
        rho = np.full(mesh4.n_vertices, 0.5)
        result = adapt_mesh(mesh4, uniform_metric(mesh4, 0.08), rho, ISOTROPIC)
        validate_mesh(result.mesh)
        assert result.mesh.n_triangles > 4 * mesh4.n_triangles
        assert result.operations["split"] > 0
        assert np.allclose(result.rho, 0.5)

    def test_round_cap(self, mesh4):
        """Test that max_iter = 1 stops after one round and flags a mesh short of the band."""
        rho = np.full(mesh4.n_vertices, 0.5)
        params = AdaptParams(hybrid=False, max_iter=1)
        result = adapt_mesh(mesh4, uniform_metric(mesh4, 0.08), rho, params)
        validate_mesh(result.mesh)
        assert result.iterations == 1
        assert result.operations["split"] > 0
        assert result.best_effort == (result.in_band < IN_BAND_TARGET)

    def test_density_transfer_conserves_mass(self):
        """Test that remeshing a smooth density changes its mass by at most 2%."""
        mesh = build_structured_mesh(16)
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        rho = 0.5 + 0.4 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
        result = adapt_mesh(mesh, uniform_metric(mesh, 0.08), rho, ISOTROPIC)
        before = mass(mesh, rho)
        assert abs(mass(result.mesh, result.rho) - before) <= 0.02 * before

    def test_coarsens(self):
        """Test that a coarser metric removes triangles."""
        mesh = build_structured_mesh(16)
        rho = np.full(mesh.n_vertices, 0.5)
        result = adapt_mesh(mesh, uniform_metric(mesh, 0.25), rho, ISOTROPIC)
        validate_mesh(result.mesh)
        assert result.mesh.n_triangles < mesh.n_triangles // 2
        assert result.operations["collapse"] > 0

    def test_outputs_are_periodic(self, mesh4, rng):
        """Test that transferred density and metric agree on paired vertices."""
        rho = mesh4.expand(rng.uniform(0.1, 1.0, size=mesh4.n_masters))
        result = adapt_mesh(mesh4, uniform_metric(mesh4, 0.15), rho, AdaptParams(rho_th=0.5, h_iso=0.2))
        slaves, masters = result.mesh.periodic_pairs.T
        assert np.array_equal(result.rho[slaves], result.rho[masters])
        assert np.array_equal(result.metric[slaves], result.metric[masters])
        assert result.metric.shape == (result.mesh.n_vertices, 2, 2)
        assert result.rho.min() >= 1e-4

    def test_rejects_indefinite_metric(self, mesh4):
        """Test that a non positive-definite metric raises ValueError."""
        metric = uniform_metric(mesh4, 0.2)
        metric[3] = np.diag([1.0, -1.0])
        with pytest.raises(ValueError):
            adapt_mesh(mesh4, metric, np.ones(mesh4.n_vertices), ISOTROPIC)

    def test_rejects_wrong_shape(self, mesh4):
        """Test that a metric of the wrong shape raises ValueError."""
        with pytest.raises(ValueError):
            adapt_mesh(mesh4, np.ones((3, 2, 2)), np.ones(mesh4.n_vertices), ISOTROPIC)

    @pytest.mark.slow
    def test_hybrid_full_material_is_isotropic(self):
        """Test that a full cell in hybrid mode meshes at roughly h_iso whatever the metric."""
        mesh = build_structured_mesh(16)
        params = AdaptParams(h_iso=0.03)
        result = adapt_mesh(
            mesh, uniform_metric(mesh, 0.2), np.ones(mesh.n_vertices), params
        )
        corners = result.mesh.vertices[result.mesh.triangles]
        edges = np.linalg.norm(corners - np.roll(corners, 1, axis=1), axis=2)
        assert 0.02 <= np.median(edges) <= 0.045

    @pytest.mark.slow
    def test_anisotropic_metric_stretches_elements(self, mesh8):
        """Test that a 4:1 metric produces elements elongated along x."""
        metric = np.tile(np.diag([1 / 0.2**2, 1 / 0.05**2]), (mesh8.n_vertices, 1, 1))
        result = adapt_mesh(mesh8, metric, np.full(mesh8.n_vertices, 0.5), ISOTROPIC)
        geometry = element_geometry(result.mesh)
        ratio = geometry.lam[:, 0] / geometry.lam[:, 1]
        assert np.median(ratio) > 2.0
        assert np.median(np.abs(geometry.r1[:, 0])) > 0.9

    @pytest.mark.slow
    def test_adaptation_evens_out_the_estimator(self):
        """Test that one pass on a smooth density narrows the spread of eta_K^2."""

        def smooth(points):
            x, y = points[:, 0], points[:, 1]
            return 0.5 + 0.4 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)

        def spread(mesh):
            eta_sq = local_estimator(mesh, smooth(mesh.vertices)).eta_K ** 2
            lo, hi = np.quantile(eta_sq, [0.05, 0.95])
            return hi / lo

        mesh = build_structured_mesh(16)
        estimate = local_estimator(mesh, smooth(mesh.vertices))
        metric = compute_metric(
            mesh, estimate.patch_matrices, 0.05, estimate.geometry,
            aspect_ratio_max=10.0, h_min=0.01, h_max=0.25, max_elements=2000,
        )
        result = adapt_mesh(
            mesh, vertex_metric(metric, mesh), smooth(mesh.vertices), ISOTROPIC
        )
        assert spread(result.mesh) < spread(mesh)
