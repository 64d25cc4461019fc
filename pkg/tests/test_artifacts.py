"""
Tests for run artifacts: native mesh text, VTK, density tables and run
directories.
"""

import json

import numpy as np
import pytest

from lib import artifacts
from lib.config import DesignSpec
from lib.driver import DesignResult, RunReport, evaluate_design
from lib.errors import EXIT_OTHER, MeshIntegrityError, exit_code_for
from lib.mesh import build_structured_mesh
from lib.optimizer import mass


@pytest.fixture
def stored_result(mesh8, periodic_density, tiny_spec):
    final = evaluate_design(mesh8, periodic_density, tiny_spec, parallel=False)
    report = RunReport(
        spec=tiny_spec,
        termination="kmax",
        iterations=1,
        final=final,
        history=[{"k": 0, "mass": final.mass, "constraints": final.constraints.values.tolist(), "n_triangles": 128}],
        optimizer_log=[
            {"outer": 0, "iteration": 1, "mass": 0.6, "constraints": [0.1] * 5, "kkt": 0.2, "feasibility": 0.0},
            {"outer": 0, "iteration": 2, "mass": 0.5, "constraints": [0.1] * 5, "kkt": 0.1, "feasibility": 0.0},
        ],
        n_vertices=mesh8.n_vertices,
        n_triangles=mesh8.n_triangles,
        wall_time=1.5,
    )
    metric = np.tile(np.eye(2), (mesh8.n_vertices, 1, 1))
    return DesignResult(mesh8, periodic_density, final.tensors, report, metric)


class TestMeshText:
    """Tests for the native mesh format."""

    def test_round_trip(self, mesh8, tmp_path):
        """Test that vertices, triangles and pairs survive exactly."""
        path = tmp_path / "mesh.txt"
        artifacts.write_mesh_text(mesh8, path)
        loaded = artifacts.read_mesh_text(path)
        assert np.array_equal(loaded.vertices, mesh8.vertices)
        assert np.array_equal(loaded.triangles, mesh8.triangles)
        assert np.array_equal(loaded.periodic_pairs, mesh8.periodic_pairs)

    def test_truncated(self, mesh4, tmp_path):
        """Test that a truncated file raises MeshIntegrityError."""
        path = tmp_path / "mesh.txt"
        artifacts.write_mesh_text(mesh4, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-3]) + "\n")
        with pytest.raises(MeshIntegrityError):
            artifacts.read_mesh_text(path)

    def test_wrong_header(self, tmp_path):
        """Test that a missing section header raises MeshIntegrityError."""
        path = tmp_path / "mesh.txt"
        path.write_text("points 1\n0 0\n")
        with pytest.raises(MeshIntegrityError):
            artifacts.read_mesh_text(path)


class TestDensityTable:
    """Tests for density CSV files."""

    def test_round_trip(self, mesh8, periodic_density, tmp_path):
        """Test that densities are read back bit for bit."""
        path = tmp_path / "density.csv"
        artifacts.write_density(path, mesh8, periodic_density)
        assert np.array_equal(artifacts.read_density(path, mesh8), periodic_density)

    def test_mesh_mismatch(self, mesh4, mesh8, periodic_density, tmp_path):
        """Test that coordinates of another mesh raise MeshIntegrityError."""
        path = tmp_path / "density.csv"
        artifacts.write_density(path, mesh8, periodic_density)
        with pytest.raises(MeshIntegrityError):
            artifacts.read_density(path, mesh4)


class TestVTK:
    """Tests for VTK export and periodic tiling."""

    def test_single_square(self, tmp_path):
        """Test points, cells and point data of the 1 x 1 mesh."""
        mesh = build_structured_mesh(1)
        metric = np.tile(np.diag([4.0, 9.0]), (4, 1, 1))
        path = tmp_path / "mesh.vtk"
        artifacts.write_vtk(path, mesh, np.array([1.0, 0.5, 0.5, 1.0]), metric)
        loaded = artifacts.read_vtk(path)
        assert loaded.points.shape == (4, 3)
        assert loaded.cells_dict["triangle"].shape == (2, 3)
        assert np.allclose(loaded.point_data["rho"], [1.0, 0.5, 0.5, 1.0])
        assert np.allclose(np.asarray(loaded.point_data["metric"]).reshape(4, 4), [4.0, 0.0, 0.0, 9.0])

    def test_tiling(self, mesh4, rng):
        """Test that a 3 x 3 tiling merges shared vertices and keeps nine times the mass."""
        rho = mesh4.expand(rng.uniform(size=mesh4.n_masters))
        points, triangles, values = artifacts.tile_cell(mesh4, rho, 3)
        assert points.shape == (13 * 13, 2)
        assert triangles.shape == (9 * mesh4.n_triangles, 3)
        d1 = points[triangles[:, 1]] - points[triangles[:, 0]]
        d2 = points[triangles[:, 2]] - points[triangles[:, 0]]
        areas = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        tiled_mass = np.sum(areas * values[triangles].mean(axis=1))
        assert tiled_mass == pytest.approx(9.0 * mass(mesh4, rho))

    def test_tiling_copies(self, mesh4):
        """Test that fewer than one copy raises ValueError."""
        with pytest.raises(ValueError):
            artifacts.tile_cell(mesh4, np.ones(mesh4.n_vertices), 0)


class TestRunDirectory:
    """Tests for export_run, export_partial and load_run."""

    def test_export_writes_every_artifact(self, stored_result, tmp_path):
        """Test that all seven files are written."""
        paths = artifacts.export_run(stored_result, tmp_path / "run")
        assert len(paths) == 7
        assert all(path.is_file() for path in paths.values())
        assert sorted(path.name for path in paths.values()) == [
            "cell_3x3.vtk", "density.csv", "history.jsonl", "mesh.txt",
            "mesh.vtk", "report.json", "timing.json",
        ]
        timing = json.loads(paths[artifacts.TIMING_JSON].read_text())
        assert timing == {"wall_time": 1.5}
        assert "wall_time" not in json.loads(paths[artifacts.REPORT_JSON].read_text())

    def test_history_lines(self, stored_result, tmp_path):
        """Test one JSON line per optimizer iteration."""
        paths = artifacts.export_run(stored_result, tmp_path)
        history = artifacts.read_history(paths[artifacts.HISTORY_JSONL])
        assert len(history) == 2
        assert history["iteration"].tolist() == [1, 2]
        assert history["outer"].tolist() == [0, 0]

    def test_load_run_reproduces_evaluation(self, stored_result, tmp_path):
        """Test that mass and constraints re-evaluated from disk match the report."""
        artifacts.export_run(stored_result, tmp_path)
        stored = artifacts.load_run(tmp_path)
        assert stored.name == "tiny"
        spec = DesignSpec(**stored.report["spec"])
        assert spec == stored_result.report.spec
        again = evaluate_design(stored.mesh, stored.rho, spec, parallel=False)
        final = stored.report["final"]
        assert again.mass == pytest.approx(final["mass"], abs=1e-9)
        for name, entry in final["constraints"].items():
            assert again.constraints.to_dict()[name]["value"] == pytest.approx(entry["value"], abs=1e-9)

    def test_partial_report(self, tiny_spec, tmp_path):
        """Test that an aborted run still leaves a report behind."""
        report = RunReport(spec=tiny_spec, error="SolverError: singular")
        path = artifacts.export_partial(report, tmp_path)
        payload = json.loads(path.read_text())
        assert payload["termination"] == "aborted"
        assert payload["final"] is None
        assert artifacts.read_history(tmp_path / artifacts.HISTORY_JSONL).empty

    def test_missing_artifact(self, tmp_path):
        """Test that an empty directory raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            artifacts.load_run(tmp_path)


class TestVerifyRun:
    """Tests for verification of a stored run directory."""

    def test_writes_verification(self, stored_result, tmp_path):
        """Test that verification.json lands next to the run with the stored settings."""
        artifacts.export_run(stored_result, tmp_path)
        stored, result = artifacts.verify_run(tmp_path, parallel=False)
        payload = json.loads((tmp_path / artifacts.VERIFICATION_JSON).read_text())
        assert stored.name == "tiny"
        assert payload["threshold"] == 0.75
        assert payload["bounds_check"] == "passed"
        assert payload["n_triangles"] == result.n_triangles == 2 * 20 * 20

    def test_overrides(self, stored_result, tmp_path):
        """Test that threshold and spacing overrides reach the verification."""
        artifacts.export_run(stored_result, tmp_path)
        _, result = artifacts.verify_run(tmp_path, threshold=0.5, h=0.1, parallel=False)
        assert result.threshold == 0.5
        assert result.h == pytest.approx(0.1)

    def test_invalid_threshold(self, stored_result, tmp_path):
        """Test that an out-of-range threshold raises ValueError and maps to exit code 1."""
        artifacts.export_run(stored_result, tmp_path)
        with pytest.raises(ValueError) as excinfo:
            artifacts.verify_run(tmp_path, threshold=1.5, parallel=False)
        assert exit_code_for(excinfo.value) == EXIT_OTHER
        assert not (tmp_path / artifacts.VERIFICATION_JSON).exists()

    def test_missing_run(self, tmp_path):
        """Test that a missing run directory raises FileNotFoundError and maps to exit code 1."""
        with pytest.raises(FileNotFoundError) as excinfo:
            artifacts.verify_run(tmp_path / "absent")
        assert exit_code_for(excinfo.value) == EXIT_OTHER
