"""
Nodal rasterizations of standard lattice unit cells.

Each function returns a periodic density on the given mesh: 1 within half a
strut width of a strut centre line, rho_min elsewhere. Centre lines are
taken modulo 1, so struts on the cell boundary continue across it.
"""

import numpy as np

from lib.mesh import UnitCellMesh


def _wrap(t: np.ndarray) -> np.ndarray:
    """Signed distance to the nearest integer."""
    return t - np.round(t)


def _distance_to_lines(mesh: UnitCellMesh, normal: tuple[float, float]) -> np.ndarray:
    """Distance from each vertex to the line family n . x = integer."""
    n = np.asarray(normal, dtype=float)
    return np.abs(_wrap(mesh.vertices @ n)) / np.linalg.norm(n)


def _rasterize(mesh: UnitCellMesh, distances: list[np.ndarray], width: float, rho_min: float) -> np.ndarray:
    if width <= 0:
        raise ValueError(f"Strut width must be positive, got {width}")
    nearest = np.min(np.vstack(distances), axis=0)
    return mesh.periodize(np.where(nearest <= 0.5 * width + 1e-12, 1.0, rho_min))


def triangular_lattice(mesh: UnitCellMesh, strut_width: float = 0.1, rho_min: float = 1e-4) -> np.ndarray:
    """
    Fully triangulated square lattice: struts along x = 0, y = 0 and y = x.

    The cell is mirror symmetric about y = x.
    """
    return _rasterize(
        mesh,
        [
            _distance_to_lines(mesh, (1.0, 0.0)),
            _distance_to_lines(mesh, (0.0, 1.0)),
            _distance_to_lines(mesh, (-1.0, 1.0)),
        ],
        strut_width,
        rho_min,
    )


def rotated_square_lattice(mesh: UnitCellMesh, strut_width: float = 0.1, rho_min: float = 1e-4) -> np.ndarray:
    """Square lattice turned by 45 degrees: struts along both cell diagonals."""
    return _rasterize(
        mesh,
        [_distance_to_lines(mesh, (-1.0, 1.0)), _distance_to_lines(mesh, (1.0, 1.0))],
        strut_width,
        rho_min,
    )


def braced_square_lattice(mesh: UnitCellMesh, strut_width: float = 0.1, rho_min: float = 1e-4) -> np.ndarray:
    """Rotated square lattice with a horizontal strut through the cell centre."""
    centre = np.abs(mesh.vertices[:, 1] - 0.5)
    return _rasterize(
        mesh,
        [
            _distance_to_lines(mesh, (-1.0, 1.0)),
            _distance_to_lines(mesh, (1.0, 1.0)),
            centre,
        ],
        strut_width,
        rho_min,
    )


def cavity_cell(
    mesh: UnitCellMesh, cavity_w: float = 0.6, cavity_h: float = 0.4, rho_min: float = 1e-4
) -> np.ndarray:
    """Solid cell with a centred rectangular cavity of size cavity_w x cavity_h."""
    if not (0.0 < cavity_w < 1.0 and 0.0 < cavity_h < 1.0):
        raise ValueError(f"Cavity must fit inside the cell, got {cavity_w} x {cavity_h}")
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    inside = (np.abs(x - 0.5) < 0.5 * cavity_w) & (np.abs(y - 0.5) < 0.5 * cavity_h)
    return mesh.periodize(np.where(inside, rho_min, 1.0))


LATTICES = {
    "triangular": triangular_lattice,
    "rotated_square": rotated_square_lattice,
    "braced_square": braced_square_lattice,
    "cavity": cavity_cell,
}
