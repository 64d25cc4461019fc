"""
Steady heat-conduction cell problems.

Two periodic temperature fluctuations, one per unit macroscopic gradient,
with the SIMP-weighted conductivity rho^s k.
"""

import numpy as np

from lib import fem
from lib.cell_problem import CellPhysics, CellSolution, solve_cell_problems
from lib.mesh import UnitCellMesh


class ThermalCellPhysics(CellPhysics):
    """Scalar conduction with an orthotropic bulk conductivity."""

    name = "thermal"
    n_components = 1

    def __init__(self, law: fem.MaterialLaw):
        self.law = law
        self.exponent = law.s
        self._D = np.diag([law.k11, law.k22])

    def constitutive(self) -> np.ndarray:
        return self._D

    def operator(self, mesh: UnitCellMesh) -> np.ndarray:
        return fem.scalar_gradient_operator(fem.p1_gradients(mesh))


def solve_thermal_cell_problems(
    mesh: UnitCellMesh, rho: np.ndarray, law: fem.MaterialLaw
) -> CellSolution:
    """Solve the two thermal cell problems for a nodal density."""
    return solve_cell_problems(ThermalCellPhysics(law), mesh, rho)
