"""
Run artifacts on disk.

A run directory holds:
    mesh.txt           native mesh text (vertices, triangles, periodic pairs)
    mesh.vtk           legacy VTK with rho and the target metric as point data
    density.csv        x, y, rho per vertex
    report.json        RunReport (byte-reproducible for a fixed spec)
    history.jsonl      one optimizer iteration record per line
    timing.json        wall time of the run
    cell_3x3.vtk       3 x 3 periodic tiling for viewing
    verification.json  written by the verify script
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import meshio
import numpy as np
import pandas as pd

from lib.config import DesignSpec
from lib.driver import DesignResult, RunReport, VerificationResult, verify
from lib.errors import MeshIntegrityError
from lib.mesh import PERIODIC_TOL, UnitCellMesh

logger = logging.getLogger(__name__)

MESH_TEXT = "mesh.txt"
MESH_VTK = "mesh.vtk"
DENSITY_CSV = "density.csv"
REPORT_JSON = "report.json"
HISTORY_JSONL = "history.jsonl"
TIMING_JSON = "timing.json"
TILED_VTK = "cell_3x3.vtk"
VERIFICATION_JSON = "verification.json"

FLOAT_FORMAT = "%.17g"


# -- native mesh text ----------------------------------------------------------


def write_mesh_text(mesh: UnitCellMesh, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write(f"vertices {mesh.n_vertices}\n")
        np.savetxt(f, mesh.vertices, fmt=FLOAT_FORMAT)
        f.write(f"triangles {mesh.n_triangles}\n")
        np.savetxt(f, mesh.triangles, fmt="%d")
        f.write(f"pairs {len(mesh.periodic_pairs)}\n")
        np.savetxt(f, mesh.periodic_pairs, fmt="%d")


def _section(lines: list[str], start: int, name: str, width: int, dtype) -> tuple[np.ndarray, int]:
    header = lines[start].split() if start < len(lines) else []
    if len(header) != 2 or header[0] != name:
        raise MeshIntegrityError(f"Expected '{name} <count>' at line {start + 1}")
    count = int(header[1])
    rows = [line.split() for line in lines[start + 1 : start + 1 + count]]
    if len(rows) != count or any(len(row) != width for row in rows):
        raise MeshIntegrityError(f"Section {name!r} is truncated or malformed")
    return np.array(rows, dtype=dtype).reshape(count, width), start + 1 + count


def read_mesh_text(path: str | Path) -> UnitCellMesh:
    """
    Read a mesh written by write_mesh_text.

    Raises:
        MeshIntegrityError: If the file is malformed
    """
    lines = [line for line in Path(path).read_text().splitlines() if line.strip()]
    vertices, cursor = _section(lines, 0, "vertices", 2, float)
    triangles, cursor = _section(lines, cursor, "triangles", 3, np.int64)
    pairs, _ = _section(lines, cursor, "pairs", 2, np.int64)
    return UnitCellMesh(vertices, triangles, pairs)


# -- VTK -----------------------------------------------------------------------


def _points_3d(vertices: np.ndarray) -> np.ndarray:
    return np.column_stack([vertices, np.zeros(len(vertices))])


def write_vtk(
    path: str | Path,
    mesh: UnitCellMesh,
    rho: np.ndarray,
    metric: np.ndarray | None = None,
) -> None:
    """
    Legacy VTK of the mesh with rho (and the metric, flattened row-major to
    4 components) as point data.
    """
    point_data = {"rho": np.asarray(rho, dtype=float)}
    if metric is not None:
        point_data["metric"] = np.asarray(metric, dtype=float).reshape(mesh.n_vertices, 4)
    cells = [meshio.CellBlock("triangle", mesh.triangles)]
    meshio.Mesh(_points_3d(mesh.vertices), cells, point_data=point_data).write(
        str(path), file_format="vtk", binary=False
    )


def tile_cell(
    mesh: UnitCellMesh, rho: np.ndarray, copies: int = 3
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    copies x copies periodic tiling of the cell.

    Coincident vertices on shared cell edges are merged.

    Returns:
        (points (N, 2), triangles (M, 3), rho (N,))
    """
    if copies < 1:
        raise ValueError(f"copies must be >= 1, got {copies}")
    nv = mesh.n_vertices
    shifts = np.array([(i, j) for j in range(copies) for i in range(copies)], dtype=float)
    points = (mesh.vertices[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
    triangles = (mesh.triangles[None, :, :] + nv * np.arange(len(shifts))[:, None, None]).reshape(-1, 3)
    values = np.tile(np.asarray(rho, dtype=float), len(shifts))

    keys = np.round(points / PERIODIC_TOL).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    return points[first], inverse[triangles], values[first]


def write_tiled_vtk(path: str | Path, mesh: UnitCellMesh, rho: np.ndarray, copies: int = 3) -> None:
    points, triangles, values = tile_cell(mesh, rho, copies)
    meshio.Mesh(
        _points_3d(points),
        [meshio.CellBlock("triangle", triangles)],
        point_data={"rho": values},
    ).write(str(path), file_format="vtk", binary=False)


def read_vtk(path: str | Path) -> meshio.Mesh:
    return meshio.read(str(path))


# -- tables and reports --------------------------------------------------------


def density_frame(mesh: UnitCellMesh, rho: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"x": mesh.vertices[:, 0], "y": mesh.vertices[:, 1], "rho": rho})


def write_density(path: str | Path, mesh: UnitCellMesh, rho: np.ndarray) -> None:
    density_frame(mesh, rho).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_density(path: str | Path, mesh: UnitCellMesh | None = None) -> np.ndarray:
    """
    Nodal density from a density CSV.

    Raises:
        MeshIntegrityError: If the coordinates do not match mesh
    """
    frame = pd.read_csv(path)
    if mesh is not None:
        coords = frame[["x", "y"]].to_numpy()
        if coords.shape != mesh.vertices.shape or not np.allclose(coords, mesh.vertices, atol=1e-12):
            raise MeshIntegrityError(f"Density file {path} does not match the mesh vertices")
    return frame["rho"].to_numpy(dtype=float)


def report_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_history(path: str | Path, records: list[dict]) -> None:
    if not records:
        Path(path).write_text("")
        return
    pd.DataFrame.from_records(records).to_json(path, orient="records", lines=True)


def read_history(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return pd.DataFrame()
    return pd.read_json(path, orient="records", lines=True)


def export_run(result: DesignResult, out_dir: str | Path) -> dict[str, Path]:
    """
    Write every artifact of a finished run.

    Returns:
        Artifact name -> written path

    Raises:
        OSError: If out_dir cannot be created or written
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        name: out / name
        for name in (MESH_TEXT, MESH_VTK, DENSITY_CSV, REPORT_JSON, HISTORY_JSONL, TIMING_JSON, TILED_VTK)
    }

    write_mesh_text(result.mesh, paths[MESH_TEXT])
    write_vtk(paths[MESH_VTK], result.mesh, result.rho, result.metric)
    write_density(paths[DENSITY_CSV], result.mesh, result.rho)
    paths[REPORT_JSON].write_text(report_json(result.report))
    write_history(paths[HISTORY_JSONL], result.report.optimizer_log)
    write_json(paths[TIMING_JSON], {"wall_time": result.report.wall_time})
    write_tiled_vtk(paths[TILED_VTK], result.mesh, result.rho)

    logger.info(f"Wrote {len(paths)} artifacts to {out}")
    return paths


def export_partial(report: RunReport, out_dir: str | Path) -> Path:
    """Write the report of an aborted run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / REPORT_JSON
    path.write_text(report_json(report))
    write_history(out / HISTORY_JSONL, report.optimizer_log)
    return path


@dataclass
class StoredRun:
    """A run directory read back from disk."""

    path: Path
    mesh: UnitCellMesh
    rho: np.ndarray
    report: dict

    @property
    def name(self) -> str:
        return self.report.get("name", self.path.name)


def load_run(run_dir: str | Path) -> StoredRun:
    """
    Read mesh, density and report of a run directory.

    Raises:
        FileNotFoundError: If an artifact is missing
        MeshIntegrityError: If mesh and density disagree
    """
    run_dir = Path(run_dir)
    mesh = read_mesh_text(run_dir / MESH_TEXT)
    rho = read_density(run_dir / DENSITY_CSV, mesh)
    report = json.loads((run_dir / REPORT_JSON).read_text())
    return StoredRun(path=run_dir, mesh=mesh, rho=rho, report=report)


def verify_run(
    run_dir: str | Path,
    threshold: float | None = None,
    h: float | None = None,
    parallel: bool | None = None,
) -> tuple[StoredRun, VerificationResult]:
    """
    Verify a stored run and write verification.json next to it.

    Args:
        run_dir: Run directory written by export_run
        threshold: Material threshold (default: the run's verify_threshold)
        h: Spacing of the verification mesh (default: the run's verify_h)
        parallel: Solve the two physics families on worker threads

    Raises:
        FileNotFoundError: If an artifact is missing
        ValueError: If the stored spec or an override is invalid
        DegenerateDesignError: If no material survives the threshold
    """
    stored = load_run(run_dir)
    spec = DesignSpec(**stored.report["spec"])
    if threshold is not None:
        spec.verify_threshold = threshold
    if h is not None:
        spec.verify_h = h
    spec.validate()

    result = verify(stored.mesh, stored.rho, spec, parallel)
    write_json(Path(run_dir) / VERIFICATION_JSON, result.to_dict())
    return stored, result
