"""
Homogenized tensors and engineering moduli.

E^H and k^H are energy averages of the corrected reference fields over the
cell. All integrands are elementwise constant for P1 fields, so the
one-point rule is exact.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from lib.cell_problem import CellSolution, solve_cell_problems
from lib.errors import DegenerateTensorError
from lib.fem import MaterialLaw
from lib.mesh import UnitCellMesh
from physics.elastic import PLANE_STRESS, ElasticCellPhysics
from physics.thermal import ThermalCellPhysics

logger = logging.getLogger(__name__)

# Largest condition number accepted when inverting E^H
MAX_CONDITION = 1e12

# Relative slack on the rho_min^p * bulk <= diag <= bulk sandwich
BOUNDS_SLACK = 1e-8


@dataclass(frozen=True)
class HomogenizedTensors:
    """3x3 Voigt elastic tensor and 2x2 conductivity tensor."""

    E: np.ndarray
    k: np.ndarray

    def to_dict(self) -> dict:
        return {"E": self.E.tolist(), "k": self.k.tolist()}


@dataclass(frozen=True)
class EngineeringModuli:
    """Directional moduli read off the compliance diagonal, plus conductivities."""

    Ex: float
    Ey: float
    G: float
    k11: float
    k22: float

    def to_dict(self) -> dict:
        return {
            "Ex": self.Ex,
            "Ey": self.Ey,
            "G": self.G,
            "k11": self.k11,
            "k22": self.k22,
        }


def homogenized_tensor(solution: CellSolution) -> np.ndarray:
    """H_cd = sum_K w_K |K| (e_c - B u_c)^T D (e_d - B u_d)."""
    D = solution.physics.constitutive()
    wa = solution.weights * solution.mesh.areas
    eps = solution.corrected
    return np.einsum("e,cei,ij,dej->cd", wa, eps, D, eps)


def mutual_energy_tensor(solution: CellSolution) -> np.ndarray:
    """Alternative form sum_K w_K |K| (e_c - B u_c)^T D e_d (equal by Galerkin orthogonality)."""
    D = solution.physics.constitutive()
    wa = solution.weights * solution.mesh.areas
    return np.einsum("e,cei,id->cd", wa, solution.corrected, D)


def _checked(solution: CellSolution, mesh: UnitCellMesh, rho: np.ndarray) -> CellSolution:
    rho = np.asarray(rho, dtype=float)
    if mesh is not solution.mesh or rho.shape != solution.rho.shape:
        raise ValueError(
            f"{solution.physics.name} fluctuations belong to another mesh "
            f"({solution.mesh.n_vertices} vertices, density has {rho.shape[0]})"
        )
    solution.check_current(mesh, rho)
    return solution


def elastic_tensor(
    mesh: UnitCellMesh, rho: np.ndarray, law: MaterialLaw, fluctuations: CellSolution
) -> np.ndarray:
    """
    Homogenized 3x3 Voigt elastic tensor.

    Args:
        mesh: Mesh of the solve
        rho: Nodal density the fluctuations were solved for
        law: Bulk material (exponent check only)
        fluctuations: Elastic CellSolution

    Returns:
        E^H

    Raises:
        ValueError: If the fluctuations do not match (mesh, rho, law)
    """
    _checked(fluctuations, mesh, rho)
    if fluctuations.physics.exponent != law.p:
        raise ValueError("Elastic fluctuations were solved with a different SIMP exponent")
    return homogenized_tensor(fluctuations)


def thermal_tensor(
    mesh: UnitCellMesh, rho: np.ndarray, law: MaterialLaw, fluctuations: CellSolution
) -> np.ndarray:
    """Homogenized 2x2 conductivity tensor (see elastic_tensor)."""
    _checked(fluctuations, mesh, rho)
    if fluctuations.physics.exponent != law.s:
        raise ValueError("Thermal fluctuations were solved with a different SIMP exponent")
    return homogenized_tensor(fluctuations)


def engineering_moduli(E: np.ndarray, k: np.ndarray) -> EngineeringModuli:
    """
    Engineering moduli from the homogenized tensors.

    Ex, Ey and G are the inverses of the compliance diagonal C = E^-1.

    Raises:
        DegenerateTensorError: If E^H is singular, indefinite or ill-conditioned
    """
    E = np.asarray(E, dtype=float)
    sym = 0.5 * (E + E.T)
    eig = np.linalg.eigvalsh(sym)
    if eig[0] <= 0:
        raise DegenerateTensorError(
            f"Homogenized elastic tensor is not positive definite (min eigenvalue {eig[0]:.3e})"
        )
    condition = eig[-1] / eig[0]
    if condition > MAX_CONDITION:
        raise DegenerateTensorError(
            f"Homogenized elastic tensor is near singular (condition number {condition:.3e})"
        )
    C = np.linalg.inv(E)
    return EngineeringModuli(
        Ex=float(1.0 / C[0, 0]),
        Ey=float(1.0 / C[1, 1]),
        G=float(1.0 / C[2, 2]),
        k11=float(k[0, 0]),
        k22=float(k[1, 1]),
    )


def check_bounds(
    tensors: HomogenizedTensors, law: MaterialLaw, rho_min: float, plane: str = PLANE_STRESS
) -> None:
    """
    Assert rho_min^p * bulk <= diagonal entries <= bulk for both tensors.

    Raises:
        DegenerateTensorError: If a diagonal entry leaves its sandwich
    """
    checks = [
        ("E", np.diag(tensors.E), np.diag(ElasticCellPhysics(law, plane).constitutive()), law.p),
        ("k", np.diag(tensors.k), np.array([law.k11, law.k22]), law.s),
    ]
    for label, diag, bulk, exponent in checks:
        lower = rho_min**exponent * bulk * (1.0 - BOUNDS_SLACK)
        upper = bulk * (1.0 + BOUNDS_SLACK)
        if np.any(diag < lower) or np.any(diag > upper):
            raise DegenerateTensorError(
                f"Diagonal of {label}^H {np.round(diag, 12).tolist()} outside "
                f"[{lower.tolist()}, {upper.tolist()}]"
            )


def parallel_enabled() -> bool:
    """Whether the two physics families are solved on worker threads."""
    return os.environ.get("CELLDESIGN_PARALLEL", "1").strip() not in ("0", "false", "no")


def solve_both(
    mesh: UnitCellMesh,
    rho: np.ndarray,
    law: MaterialLaw,
    plane: str = PLANE_STRESS,
    parallel: bool | None = None,
    element_rho: np.ndarray | None = None,
) -> tuple[CellSolution, CellSolution]:
    """
    Solve the elastic and thermal cell problems for one density.

    The two families share nothing but the mesh and density, so they run on
    two worker threads unless parallel is False (or CELLDESIGN_PARALLEL=0).
    element_rho overrides the element means of rho in both families.
    """
    if parallel is None:
        parallel = parallel_enabled()
    elastic = ElasticCellPhysics(law, plane)
    thermal = ThermalCellPhysics(law)
    if not parallel:
        return (
            solve_cell_problems(elastic, mesh, rho, element_rho),
            solve_cell_problems(thermal, mesh, rho, element_rho),
        )

    with ThreadPoolExecutor(max_workers=2) as executor:
        futures = [
            executor.submit(solve_cell_problems, physics, mesh, rho, element_rho)
            for physics in (elastic, thermal)
        ]
        return futures[0].result(), futures[1].result()


def homogenize(
    mesh: UnitCellMesh,
    rho: np.ndarray,
    law: MaterialLaw,
    plane: str = PLANE_STRESS,
    parallel: bool | None = None,
) -> tuple[HomogenizedTensors, CellSolution, CellSolution]:
    """
    Solve all cell problems and assemble E^H and k^H.

    Returns:
        (tensors, elastic solution, thermal solution)
    """
    elastic, thermal = solve_both(mesh, rho, law, plane, parallel)
    tensors = HomogenizedTensors(
        E=elastic_tensor(mesh, rho, law, elastic),
        k=thermal_tensor(mesh, rho, law, thermal),
    )
    logger.debug(
        f"Homogenized on {mesh.n_triangles} triangles: "
        f"E1111={tensors.E[0, 0]:.6g}, k11={tensors.k[0, 0]:.6g}"
    )
    return tensors, elastic, thermal
