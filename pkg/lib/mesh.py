"""
Triangle meshes of the periodic unit cell Y = (0, 1)^2.

A mesh stores every vertex explicitly, including the copies that sit on the
right and top edges of the cell. Periodicity is carried by a list of
(slave, master) pairs: every vertex on x = 1 or y = 1 points at the vertex
with the same coordinates modulo 1, and the four corners collapse onto the
origin. Geometry queries (areas, anisotropy triplets, recovery patches) work
on the unfolded mesh, so patches never wrap across the cell boundary.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from lib.errors import DegenerateElementError, MeshIntegrityError

logger = logging.getLogger(__name__)

# Matching tolerance for periodic vertex pairs, in cell units
PERIODIC_TOL = 1e-9

# Reference element: equilateral triangle inscribed in the unit circle
REFERENCE_VERTICES = np.array(
    [[0.0, 1.0], [-np.sqrt(3.0) / 2.0, -0.5], [np.sqrt(3.0) / 2.0, -0.5]]
)
REFERENCE_AREA = 3.0 * np.sqrt(3.0) / 4.0
_REFERENCE_EDGES_INV = np.linalg.inv(
    np.column_stack(
        [
            REFERENCE_VERTICES[1] - REFERENCE_VERTICES[0],
            REFERENCE_VERTICES[2] - REFERENCE_VERTICES[0],
        ]
    )
)

# Relative area below which a triangle counts as degenerate
_DEGENERATE_AREA = 1e-14


@dataclass(frozen=True, eq=False)
class UnitCellMesh:
    """
    Conforming triangulation of the unit cell with periodic identification.

    Attributes:
        vertices: (nv, 2) coordinates in [0, 1]^2
        triangles: (nt, 3) counter-clockwise vertex indices
        periodic_pairs: (np, 2) rows of (slave, master)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    periodic_pairs: np.ndarray

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def areas(self) -> np.ndarray:
        """Signed triangle areas (positive for a valid mesh)."""
        return triangle_areas(self.vertices, self.triangles)

    @cached_property
    def corner_group(self) -> np.ndarray:
        """Indices of the vertices at (0,0), (1,0), (0,1), (1,1)."""
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        dist, idx = cKDTree(self.vertices).query(corners)
        if np.any(dist > PERIODIC_TOL):
            raise MeshIntegrityError("Mesh is missing a unit-cell corner vertex")
        return idx.astype(np.int64)

    @cached_property
    def master(self) -> np.ndarray:
        """Master vertex of every vertex (masters map to themselves)."""
        master = np.arange(self.n_vertices)
        if len(self.periodic_pairs):
            master[self.periodic_pairs[:, 0]] = self.periodic_pairs[:, 1]
        # Chains (a corner pointing at another slave) resolve in a few hops
        for _ in range(4):
            nxt = master[master]
            if np.array_equal(nxt, master):
                break
            master = nxt
        return master

    @cached_property
    def master_vertices(self) -> np.ndarray:
        """Sorted indices of the independent (master) vertices."""
        return np.flatnonzero(self.master == np.arange(self.n_vertices))

    @cached_property
    def master_column(self) -> np.ndarray:
        """Position of each vertex's master inside master_vertices."""
        column = np.full(self.n_vertices, -1, dtype=np.int64)
        column[self.master_vertices] = np.arange(len(self.master_vertices))
        return column[self.master]

    @property
    def n_masters(self) -> int:
        return int(len(self.master_vertices))

    def fold(self, nodal: np.ndarray) -> np.ndarray:
        """Sum per-vertex values onto master vertices (adjoint of expand)."""
        out = np.zeros((self.n_masters,) + nodal.shape[1:])
        np.add.at(out, self.master_column, nodal)
        return out

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Copy master values to every vertex of its periodic class."""
        return values[self.master_column]

    def periodize(self, nodal: np.ndarray) -> np.ndarray:
        """Overwrite slave values with their master's value."""
        return nodal[self.master]

    @cached_property
    def incidence(self) -> sparse.csr_matrix:
        """(nt, nv) triangle-vertex incidence matrix."""
        nt = self.n_triangles
        rows = np.repeat(np.arange(nt), 3)
        data = np.ones(3 * nt)
        return sparse.csr_matrix(
            (data, (rows, self.triangles.ravel())), shape=(nt, self.n_vertices)
        )

    @cached_property
    def patch_matrix(self) -> sparse.csr_matrix:
        """
        (nt, nt) 0/1 matrix whose row K marks the recovery patch of K.

        Two triangles are patch neighbours when they share at least one
        vertex index. Slave and master copies are distinct indices, so
        patches stop at the cell boundary.
        """
        shared = (self.incidence @ self.incidence.T).tocsr()
        shared.data[:] = 1.0
        return shared

    @cached_property
    def edges(self) -> np.ndarray:
        """(ne, 2) unique undirected edges, each row sorted."""
        return unique_edges(self.triangles)


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed areas of triangles (positive when counter-clockwise)."""
    p0 = vertices[triangles[:, 0]]
    d1 = vertices[triangles[:, 1]] - p0
    d2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def unique_edges(triangles: np.ndarray) -> np.ndarray:
    """Unique sorted edges of a triangle list."""
    all_edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    return np.unique(np.sort(all_edges, axis=1), axis=0)


def pair_periodic_vertices(
    vertices: np.ndarray, tol: float = PERIODIC_TOL
) -> np.ndarray:
    """
    Pair every vertex on x = 1 or y = 1 with its image modulo 1.

    Args:
        vertices: (nv, 2) coordinates in [0, 1]^2
        tol: Matching tolerance in cell units

    Returns:
        (np, 2) int array of (slave, master) rows

    Raises:
        MeshIntegrityError: If a boundary vertex has no periodic partner
    """
    on_far_side = np.abs(vertices - 1.0) <= tol
    slaves = np.flatnonzero(np.any(on_far_side, axis=1))
    if len(slaves) == 0:
        return np.zeros((0, 2), dtype=np.int64)

    images = np.where(on_far_side[slaves], 0.0, vertices[slaves])
    dist, partner = cKDTree(vertices).query(images)
    missing = dist > tol
    if np.any(missing):
        bad = vertices[slaves[missing][0]]
        raise MeshIntegrityError(
            f"{int(missing.sum())} boundary vertices have no periodic partner "
            f"(first at x={bad[0]:.12g}, y={bad[1]:.12g})"
        )
    return np.column_stack([slaves, partner]).astype(np.int64)


def mesh_from_arrays(vertices: np.ndarray, triangles: np.ndarray) -> UnitCellMesh:
    """Build a mesh from raw arrays, pairing periodic vertices geometrically."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    return UnitCellMesh(vertices, triangles, pair_periodic_vertices(vertices))


def build_structured_mesh(n: int) -> UnitCellMesh:
    """
    Build the n x n structured mesh of the unit cell.

    Each square is split along its (i, j) -> (i+1, j+1) diagonal, which keeps
    the mesh mirror symmetric about y = x.

    Args:
        n: Subdivisions per side

    Returns:
        Mesh with (n+1)^2 vertices and 2 n^2 triangles

    Raises:
        ValueError: If n < 1
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"Subdivisions per side must be a positive integer, got {n!r}")

    ticks = np.arange(n + 1) / n
    xs, ys = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (i + j * (n + 1)).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.concatenate(
        [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])]
    ).astype(np.int64)

    logger.debug(f"Built structured {n}x{n} mesh with {len(triangles)} triangles")
    return UnitCellMesh(vertices, triangles, pair_periodic_vertices(vertices))


@dataclass(frozen=True)
class ElementGeometry:
    """Per-triangle area and anisotropy triplet (lam1 >= lam2, r1 orthogonal to r2)."""

    area: np.ndarray
    lam: np.ndarray
    r1: np.ndarray
    r2: np.ndarray


def _affine_jacobians(points: np.ndarray) -> np.ndarray:
    """Jacobians of the maps from the reference element onto (nt, 3, 2) triangles."""
    edges = np.stack(
        [points[:, 1] - points[:, 0], points[:, 2] - points[:, 0]], axis=2
    )
    return edges @ _REFERENCE_EDGES_INV


def _anisotropy(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    d1 = points[:, 1] - points[:, 0]
    d2 = points[:, 2] - points[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    longest = np.max(
        np.stack(
            [
                np.sum(d1**2, axis=1),
                np.sum(d2**2, axis=1),
                np.sum((d2 - d1) ** 2, axis=1),
            ]
        ),
        axis=0,
    )
    degenerate = np.abs(area) <= _DEGENERATE_AREA * longest
    if np.any(degenerate):
        k = int(np.flatnonzero(degenerate)[0])
        raise DegenerateElementError(
            f"{int(degenerate.sum())} degenerate triangles (first: index {k}, "
            f"area {area[k]:.3e})"
        )

    u, lam, _ = np.linalg.svd(_affine_jacobians(points))
    r1 = u[:, :, 0].copy()
    flip = (r1[:, 0] < 0) | ((r1[:, 0] == 0) & (r1[:, 1] < 0))
    r1[flip] *= -1.0
    r2 = np.column_stack([-r1[:, 1], r1[:, 0]])
    return np.abs(area), lam, r1, r2


def element_anisotropy(
    triangle: np.ndarray,
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """
    Anisotropy triplet of one triangle.

    lam1, lam2 are the semi-axes of the ellipse circumscribed to the triangle
    (the image of the reference element's unit circle) and r1, r2 their
    directions. r1 is sign-normalized so its x-component is positive.

    Args:
        triangle: (3, 2) vertex coordinates, either orientation

    Returns:
        (lam1, lam2, r1, r2)

    Raises:
        DegenerateElementError: If the triangle has zero area
    """
    pts = np.asarray(triangle, dtype=float).reshape(1, 3, 2)
    _, lam, r1, r2 = _anisotropy(pts)
    return float(lam[0, 0]), float(lam[0, 1]), r1[0], r2[0]


def element_geometry(mesh: UnitCellMesh) -> ElementGeometry:
    """Area and anisotropy triplet of every triangle in the mesh."""
    area, lam, r1, r2 = _anisotropy(mesh.vertices[mesh.triangles])
    return ElementGeometry(area=area, lam=lam, r1=r1, r2=r2)


def patch(mesh: UnitCellMesh, k: int) -> np.ndarray:
    """Sorted indices of the triangles sharing at least one vertex with triangle k."""
    if not 0 <= k < mesh.n_triangles:
        raise ValueError(f"Triangle index {k} out of range")
    row = mesh.patch_matrix.getrow(k)
    return np.sort(row.indices)


def validate_mesh(mesh: UnitCellMesh) -> None:
    """
    Check the unit-cell mesh invariants.

    Raises:
        DegenerateElementError: If a triangle has non-positive area
        MeshIntegrityError: If conformity, coverage or periodic pairing is broken
    """
    v = mesh.vertices
    if np.any(v < -PERIODIC_TOL) or np.any(v > 1.0 + PERIODIC_TOL):
        raise MeshIntegrityError("Vertices outside the unit cell")

    areas = mesh.areas
    if np.any(areas <= 0):
        k = int(np.argmin(areas))
        raise DegenerateElementError(
            f"Triangle {k} has non-positive area {areas[k]:.3e}"
        )
    total = float(areas.sum())
    if abs(total - 1.0) > 1e-9:
        raise MeshIntegrityError(f"Triangles cover area {total:.12g}, expected 1")

    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles.ravel()] = True
    if not np.all(used):
        raise MeshIntegrityError(
            f"{int((~used).sum())} vertices have no incident triangle"
        )

    all_edges = np.sort(
        np.concatenate(
            [
                mesh.triangles[:, [0, 1]],
                mesh.triangles[:, [1, 2]],
                mesh.triangles[:, [2, 0]],
            ]
        ),
        axis=1,
    )
    edges, counts = np.unique(all_edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshIntegrityError("Edge shared by more than two triangles")
    open_edges = edges[counts == 1]
    a, b = v[open_edges[:, 0]], v[open_edges[:, 1]]
    on_side = np.zeros(len(open_edges), dtype=bool)
    for axis in (0, 1):
        for side in (0.0, 1.0):
            on_side |= (np.abs(a[:, axis] - side) <= PERIODIC_TOL) & (
                np.abs(b[:, axis] - side) <= PERIODIC_TOL
            )
    if not np.all(on_side):
        raise MeshIntegrityError(
            f"{int((~on_side).sum())} hanging edges inside the cell (non-conforming)"
        )

    pairs = mesh.periodic_pairs
    if len(pairs):
        delta = v[pairs[:, 0]] - v[pairs[:, 1]]
        if np.any(np.abs(delta - np.round(delta)) > PERIODIC_TOL):
            raise MeshIntegrityError("Periodic pair coordinates do not match modulo 1")
    expected = pair_periodic_vertices(v)
    if len(expected) != len(pairs):
        raise MeshIntegrityError(
            f"Expected {len(expected)} periodic pairs, found {len(pairs)}"
        )
