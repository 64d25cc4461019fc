"""
Point location and linear interpolation of nodal fields on a unit-cell mesh.
"""

import logging

import numpy as np
from matplotlib import tri as mtri
from scipy.spatial import cKDTree

from lib.mesh import UnitCellMesh

logger = logging.getLogger(__name__)


class FieldInterpolator:
    """
    Barycentric interpolation of P1 fields living on a background mesh.

    Points are located with matplotlib's trapezoid-map finder. Points it
    misses (on the cell boundary, or a hair outside after wrapping) fall
    back to the best incident triangle of the nearest background vertex.
    """

    def __init__(self, mesh: UnitCellMesh):
        self.mesh = mesh
        v = mesh.vertices
        self._triangulation = mtri.Triangulation(v[:, 0], v[:, 1], mesh.triangles)
        self._finder = self._triangulation.get_trifinder()
        self._tree = cKDTree(v)
        self._vertex_triangles = mesh.incidence.T.tocsr()

    def _barycentric(self, points: np.ndarray, tris: np.ndarray) -> np.ndarray:
        corners = self.mesh.vertices[self.mesh.triangles[tris]]
        J = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]], axis=2)
        l12 = np.linalg.solve(J, (points - corners[:, 0])[:, :, None])[:, :, 0]
        return np.column_stack([1.0 - l12.sum(axis=1), l12])

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Containing triangle and clipped barycentric coordinates of each point.

        Returns:
            (triangle indices (n,), weights (n, 3))
        """
        points = np.clip(np.asarray(points, dtype=float), 0.0, 1.0)
        tris = np.asarray(self._finder(points[:, 0], points[:, 1]), dtype=np.int64)

        missed = np.flatnonzero(tris < 0)
        if len(missed):
            _, nearest = self._tree.query(points[missed])
            for i, v in zip(missed, nearest):
                candidates = self._vertex_triangles.getrow(v).indices
                bary = self._barycentric(
                    np.repeat(points[i][None], len(candidates), axis=0), candidates
                )
                tris[i] = candidates[int(np.argmax(bary.min(axis=1)))]
            logger.debug(f"Located {len(missed)} points by nearest-vertex fallback")

        weights = np.clip(self._barycentric(points, tris), 0.0, None)
        weights /= weights.sum(axis=1, keepdims=True)
        return tris, weights

    def interpolate(self, points: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Interpolate nodal values (nv, ...) at points (n, 2)."""
        tris, weights = self.locate(points)
        corner_values = values[self.mesh.triangles[tris]]
        return np.einsum("nk,nk...->n...", weights, corner_values)
