"""
P1 finite elements on unit-cell meshes.

Assembly of SIMP-weighted stiffness and mass matrices, periodic degree of
freedom merging (slave columns folded into their master) and a sparse LU
solver with iterative refinement.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from lib.errors import SolverError
from lib.mesh import UnitCellMesh

logger = logging.getLogger(__name__)

# Normwise backward-error tolerance for linear solves
RESIDUAL_TOL = 1e-10
MAX_REFINEMENT_STEPS = 4


@dataclass(frozen=True)
class MaterialLaw:
    """
    Bulk material and SIMP exponents.

    Attributes:
        E: Young modulus of the solid
        nu: Poisson ratio, in (-1, 0.5)
        k11: Conductivity along x
        k22: Conductivity along y
        p: SIMP exponent for stiffness
        s: SIMP exponent for conductivity
    """

    E: float = 1.0
    nu: float = 0.3
    k11: float = 1.0
    k22: float = 1.0
    p: float = 4.0
    s: float = 4.0

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu}")
        if not (self.k11 > 0 and self.k22 > 0):
            raise ValueError(
                f"Conductivities must be positive, got ({self.k11}, {self.k22})"
            )
        if not (self.p >= 1 and self.s >= 1):
            raise ValueError(f"SIMP exponents must be >= 1, got p={self.p}, s={self.s}")


def p1_gradients(mesh: UnitCellMesh) -> np.ndarray:
    """(nt, 3, 2) gradients of the three P1 basis functions on each triangle."""
    pts = mesh.vertices[mesh.triangles]
    twice_area = 2.0 * mesh.areas
    grads = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = pts[:, j, 1] - pts[:, k, 1]
        grads[:, i, 1] = pts[:, k, 0] - pts[:, j, 0]
    return grads / twice_area[:, None, None]


def element_density(mesh: UnitCellMesh, rho: np.ndarray) -> np.ndarray:
    """Element mean of the nodal density."""
    return rho[mesh.triangles].mean(axis=1)


def scalar_gradient_operator(grads: np.ndarray) -> np.ndarray:
    """(nt, 2, 3) map from nodal values to the element gradient."""
    return np.transpose(grads, (0, 2, 1))


def voigt_strain_operator(grads: np.ndarray) -> np.ndarray:
    """
    (nt, 3, 6) map from nodal displacements to Voigt strains.

    Local dofs are ordered (u_x, u_y) per vertex; strains are
    (eps11, eps22, 2 eps12).
    """
    nt = grads.shape[0]
    B = np.zeros((nt, 3, 6))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = grads[:, :, 1]
    B[:, 2, 1::2] = grads[:, :, 0]
    return B


def element_dofs(mesh: UnitCellMesh, n_components: int) -> np.ndarray:
    """(nt, 3 * n_components) global dof indices, vertex-major."""
    tri = mesh.triangles
    return (tri[:, :, None] * n_components + np.arange(n_components)).reshape(
        mesh.n_triangles, -1
    )


def assemble_matrix(
    mesh: UnitCellMesh,
    B: np.ndarray,
    D: np.ndarray,
    weights: np.ndarray,
) -> sparse.csr_matrix:
    """
    Assemble sum_K w_K |K| B_K^T D B_K.

    Args:
        mesh: Mesh the operators live on
        B: (nt, n_strain, n_local) element operators
        D: (n_strain, n_strain) constitutive matrix
        weights: (nt,) element weights (SIMP factors)

    Returns:
        Sparse (n_dofs, n_dofs) matrix over unmerged vertex dofs
    """
    n_local = B.shape[2]
    n_components = n_local // 3
    ke = np.einsum("e,eji,jk,ekl->eil", weights * mesh.areas, B, D, B)
    dofs = element_dofs(mesh, n_components)
    rows = np.repeat(dofs, n_local, axis=1).ravel()
    cols = np.tile(dofs, (1, n_local)).ravel()
    n = mesh.n_vertices * n_components
    return sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_load(
    mesh: UnitCellMesh,
    B: np.ndarray,
    D: np.ndarray,
    weights: np.ndarray,
    strains: np.ndarray,
) -> np.ndarray:
    """
    Assemble sum_K w_K |K| B_K^T D e for each macroscopic strain e.

    Args:
        strains: (n_cases, n_strain) imposed reference strains or gradients

    Returns:
        (n_dofs, n_cases) right-hand sides
    """
    n_local = B.shape[2]
    n_components = n_local // 3
    fe = np.einsum("e,eji,jk,ck->eic", weights * mesh.areas, B, D, strains)
    dofs = element_dofs(mesh, n_components)
    n = mesh.n_vertices * n_components
    out = np.zeros((n, strains.shape[0]))
    np.add.at(out, dofs.ravel(), fe.reshape(-1, strains.shape[0]))
    return out


def assemble_mass(mesh: UnitCellMesh) -> sparse.csr_matrix:
    """Consistent P1 mass matrix."""
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = mesh.areas[:, None, None] * local
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    return sparse.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def lumped_areas(mesh: UnitCellMesh) -> np.ndarray:
    """Nodal lumped areas (one third of each incident triangle)."""
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return out


class PeriodicDofMap:
    """
    Merge slave dofs into their masters and optionally pin an anchor vertex.

    The prolongation P maps reduced unknowns to all vertex dofs, so a
    reduced system reads (P^T K P) x = P^T b and the full field is P x.
    """

    def __init__(
        self,
        mesh: UnitCellMesh,
        n_components: int = 1,
        pin_anchor: bool = True,
        anchor: int | None = None,
    ):
        """
        Args:
            mesh: Mesh providing the periodic identification
            n_components: Unknowns per vertex
            pin_anchor: Fix every component of the anchor vertex to zero
            anchor: Vertex to pin (default: the origin corner)

        Raises:
            ValueError: If anchor is not a vertex of mesh
        """
        self.n_components = n_components
        n_masters = mesh.n_masters
        column = mesh.master_column[:, None] * n_components + np.arange(n_components)
        column = column.ravel()

        keep = np.ones(n_masters * n_components, dtype=bool)
        if pin_anchor:
            if anchor is None:
                anchor = int(mesh.corner_group[0])
            if not 0 <= anchor < mesh.n_vertices:
                raise ValueError(f"Anchor {anchor} is not a vertex (mesh has {mesh.n_vertices})")
            anchor_column = int(mesh.master_column[anchor])
            keep[anchor_column * n_components : (anchor_column + 1) * n_components] = False
        reduced = np.full(len(keep), -1, dtype=np.int64)
        reduced[keep] = np.arange(int(keep.sum()))

        target = reduced[column]
        rows = np.flatnonzero(target >= 0)
        self.n_full = mesh.n_vertices * n_components
        self.n_reduced = int(keep.sum())
        self.P = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, target[rows])),
            shape=(self.n_full, self.n_reduced),
        )

    def reduce_matrix(self, K: sparse.spmatrix) -> sparse.csc_matrix:
        return (self.P.T @ K @ self.P).tocsc()

    def reduce_vector(self, b: np.ndarray) -> np.ndarray:
        return self.P.T @ b

    def prolong(self, x: np.ndarray) -> np.ndarray:
        return self.P @ x


class FactorizedSystem:
    """Sparse LU factorization reused across right-hand sides."""

    def __init__(self, A: sparse.spmatrix, label: str = "system"):
        self.A = sparse.csc_matrix(A)
        self.label = label
        try:
            self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as e:
            raise SolverError(f"Factorization of {label} failed: {e}") from e
        self._norm = float(spla.norm(self.A, np.inf))

    def solve(self, b: np.ndarray, tol: float = RESIDUAL_TOL) -> np.ndarray:
        """
        Solve A x = b with iterative refinement.

        Raises:
            SolverError: If the backward error stays above tol or the result is not finite
        """
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        error = self._backward_error(b, x)
        steps = 0
        while error > tol and steps < MAX_REFINEMENT_STEPS:
            x = x + self._lu.solve(b - self.A @ x)
            error = self._backward_error(b, x)
            steps += 1
        if not np.all(np.isfinite(x)) or error > tol:
            raise SolverError(
                f"Solve of {self.label} did not converge (backward error {error:.3e} "
                f"after {steps} refinement steps)",
                residual=error,
            )
        if steps:
            logger.debug(f"{self.label}: {steps} refinement steps, backward error {error:.2e}")
        return x

    def _backward_error(self, b: np.ndarray, x: np.ndarray) -> float:
        if not np.all(np.isfinite(x)):
            return float("inf")
        r = b - self.A @ x
        scale = self._norm * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
        if scale == 0.0:
            return 0.0
        return float(np.abs(r).max() / scale)
