"""
Base cell-problem abstraction for homogenization.

Provides a simple pattern for implementing physics whose periodic cell
problems are solved on a unit-cell mesh and averaged into a homogenized
tensor.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from lib import fem
from lib.errors import SolverError, StaleSolutionError
from lib.mesh import UnitCellMesh

logger = logging.getLogger(__name__)


class CellPhysics(ABC):
    """
    Base class for cell-problem physics.

    Subclasses must define:
        - name: Short label used in logs and reports (e.g., "elastic")
        - n_components: Unknowns per vertex (2 for displacement, 1 for temperature)
        - exponent: SIMP exponent applied to the element density
        - constitutive(): Bulk constitutive matrix D
        - operator(): Element map from nodal unknowns to strains or gradients
    """

    name: str
    n_components: int
    exponent: float

    @abstractmethod
    def constitutive(self) -> np.ndarray:
        """Bulk constitutive matrix (n_strain x n_strain)."""
        pass

    @abstractmethod
    def operator(self, mesh: UnitCellMesh) -> np.ndarray:
        """(nt, n_strain, 3 * n_components) element strain operators."""
        pass

    @property
    def n_cases(self) -> int:
        """One cell problem per unit reference strain (or gradient)."""
        return self.constitutive().shape[0]


@dataclass
class CellSolution:
    """
    Periodic fluctuations and corrected element strains for one density.

    Attributes:
        physics: Physics the problems were solved for
        mesh: Mesh of the solve
        rho: Nodal density the problems were solved for (copy)
        fluctuations: (n_cases, n_vertices * n_components) fluctuation fields
        corrected: (n_cases, nt, n_strain) element values of e_c - B u_c
        element_rho: (nt,) element mean density
        weights: (nt,) SIMP weights element_rho ** exponent
    """

    physics: CellPhysics
    mesh: UnitCellMesh
    rho: np.ndarray
    fluctuations: np.ndarray
    corrected: np.ndarray
    element_rho: np.ndarray
    weights: np.ndarray

    def fields(self) -> np.ndarray:
        """Fluctuations shaped (n_cases, n_vertices, n_components)."""
        n_cases = self.fluctuations.shape[0]
        return self.fluctuations.reshape(n_cases, self.mesh.n_vertices, -1)

    def check_current(self, mesh: UnitCellMesh, rho: np.ndarray) -> None:
        """
        Raise StaleSolutionError unless this solution belongs to (mesh, rho).
        """
        if mesh is not self.mesh or rho.shape != self.rho.shape:
            raise StaleSolutionError(
                f"{self.physics.name} cell problems were solved on another mesh"
            )
        if not np.array_equal(rho, self.rho):
            raise StaleSolutionError(
                f"{self.physics.name} cell problems are stale: density changed "
                f"since the solve (max change {np.abs(rho - self.rho).max():.3e})"
            )


def solve_cell_problems(
    physics: CellPhysics,
    mesh: UnitCellMesh,
    rho: np.ndarray,
    element_rho: np.ndarray | None = None,
    anchor: int | None = None,
) -> CellSolution:
    """
    Solve every cell problem of the given physics for a nodal density.

    Args:
        physics: CellPhysics instance
        mesh: Unit-cell mesh
        rho: (n_vertices,) nodal density in [rho_min, 1]
        element_rho: Optional (nt,) element densities replacing the mean of rho
        anchor: Vertex whose fluctuation is pinned to zero (default: the origin corner)

    Returns:
        CellSolution with fluctuations and corrected element strains

    Raises:
        ValueError: If rho does not match the mesh
        SolverError: If the periodic system cannot be solved
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (mesh.n_vertices,):
        raise ValueError(
            f"Density has shape {rho.shape}, mesh has {mesh.n_vertices} vertices"
        )
    logger.debug(f"Solving {physics.name} cell problems on {mesh.n_triangles} triangles")

    D = physics.constitutive()
    B = physics.operator(mesh)
    if element_rho is None:
        element_rho = fem.element_density(mesh, rho)
    else:
        element_rho = np.asarray(element_rho, dtype=float)
        if element_rho.shape != (mesh.n_triangles,):
            raise ValueError(
                f"Element density has shape {element_rho.shape}, "
                f"mesh has {mesh.n_triangles} triangles"
            )
    weights = element_rho**physics.exponent
    unit = np.eye(D.shape[0])

    K = fem.assemble_matrix(mesh, B, D, weights)
    loads = fem.assemble_load(mesh, B, D, weights, unit)

    dof_map = fem.PeriodicDofMap(mesh, physics.n_components, pin_anchor=True, anchor=anchor)
    system = fem.FactorizedSystem(
        dof_map.reduce_matrix(K), label=f"{physics.name} cell problem"
    )
    try:
        reduced = system.solve(dof_map.reduce_vector(loads))
    except SolverError as e:
        raise SolverError(
            f"{e} (min element density {element_rho.min():.3e}, "
            f"{mesh.n_masters} periodic vertex classes)",
            residual=e.residual,
        ) from e
    fluctuations = dof_map.prolong(reduced).T

    dofs = fem.element_dofs(mesh, physics.n_components)
    local = fluctuations[:, dofs]
    corrected = unit[:, None, :] - np.einsum("eij,cej->cei", B, local)

    return CellSolution(
        physics=physics,
        mesh=mesh,
        rho=rho.copy(),
        fluctuations=fluctuations,
        corrected=corrected,
        element_rho=element_rho,
        weights=weights,
    )
