"""
Linear elastic cell problems.

Three periodic displacement fluctuations, one per unit macroscopic strain
(eps11, eps22, 2 eps12), with the SIMP-weighted stiffness rho^p E.
"""

import numpy as np

from lib import fem
from lib.cell_problem import CellPhysics, CellSolution, solve_cell_problems
from lib.mesh import UnitCellMesh

PLANE_STRESS = "stress"
PLANE_STRAIN = "strain"


def elastic_constitutive(law: fem.MaterialLaw, plane: str = PLANE_STRESS) -> np.ndarray:
    """
    Isotropic 3x3 Voigt stiffness mapping (eps11, eps22, 2 eps12) to stresses.

    Args:
        law: Bulk material
        plane: "stress" (default) or "strain"

    Returns:
        Symmetric positive-definite 3x3 matrix

    Raises:
        ValueError: If plane is unknown
    """
    E, nu = law.E, law.nu
    if plane == PLANE_STRESS:
        c = E / (1.0 - nu * nu)
        return c * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]
        )
    if plane == PLANE_STRAIN:
        c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return c * np.array(
            [
                [1.0 - nu, nu, 0.0],
                [nu, 1.0 - nu, 0.0],
                [0.0, 0.0, 0.5 * (1.0 - 2.0 * nu)],
            ]
        )
    raise ValueError(f"Unknown plane convention {plane!r} (expected 'stress' or 'strain')")


class ElasticCellPhysics(CellPhysics):
    """Plane elasticity with displacement unknowns."""

    name = "elastic"
    n_components = 2

    def __init__(self, law: fem.MaterialLaw, plane: str = PLANE_STRESS):
        self.law = law
        self.plane = plane
        self.exponent = law.p
        self._D = elastic_constitutive(law, plane)

    def constitutive(self) -> np.ndarray:
        return self._D

    def operator(self, mesh: UnitCellMesh) -> np.ndarray:
        return fem.voigt_strain_operator(fem.p1_gradients(mesh))


def solve_elastic_cell_problems(
    mesh: UnitCellMesh,
    rho: np.ndarray,
    law: fem.MaterialLaw,
    plane: str = PLANE_STRESS,
) -> CellSolution:
    """Solve the three elastic cell problems for a nodal density."""
    return solve_cell_problems(ElasticCellPhysics(law, plane), mesh, rho)
