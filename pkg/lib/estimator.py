"""
Recovery-based error estimation on the density and anisotropic metric prediction.

The recovered gradient is the area-weighted patch average of the elementwise
P1 gradient. The difference to the raw gradient drives a per-element
estimator that is split along the element's anisotropic directions, and the
metric minimizing the element count at equidistributed error follows in
closed form from the eigenpairs of the scaled patch matrix.
"""

import logging
from dataclasses import dataclass

import numpy as np

from lib import fem
from lib.errors import MeshIntegrityError
from lib.mesh import ElementGeometry, UnitCellMesh, element_geometry

logger = logging.getLogger(__name__)

DEFAULT_ASPECT_RATIO_MAX = 100.0
DEFAULT_H_MIN = 1e-3
DEFAULT_H_MAX = 0.5

# Area of an equilateral triangle with unit metric edge, per unit lam1*lam2
UNIT_ELEMENT_AREA = np.sqrt(3.0) / 4.0


@dataclass(frozen=True)
class EstimatorResult:
    """
    Attributes:
        recovered: (nt, 2) recovered gradient per element
        error: (nt, 2) recovered minus raw gradient per element
        patch_matrices: (nt, 2, 2) G over each element's patch
        patch_area: (nt,) area of each patch
        eta_K: (nt,) local estimator
        eta: global estimator sqrt(sum eta_K^2)
        geometry: ElementGeometry of the mesh
    """

    recovered: np.ndarray
    error: np.ndarray
    patch_matrices: np.ndarray
    patch_area: np.ndarray
    eta_K: np.ndarray
    eta: float
    geometry: ElementGeometry


@dataclass(frozen=True)
class ElementMetric:
    """
    Target lengths and directions per element.

    Attributes:
        lam: (nt, 2) target lengths, lam[:, 0] >= lam[:, 1]
        r1: (nt, 2) unit direction of lam[:, 0]
        regularized: (nt,) elements whose eigenvalues were floored
        predicted_count: Element count predicted by the final lengths
        scale: Common factor applied by the complexity cap (1 when inactive)
    """

    lam: np.ndarray
    r1: np.ndarray
    regularized: np.ndarray
    predicted_count: float
    scale: float = 1.0

    @property
    def r2(self) -> np.ndarray:
        return np.column_stack([-self.r1[:, 1], self.r1[:, 0]])

    def tensors(self) -> np.ndarray:
        """(nt, 2, 2) metric tensors R diag(lam1^-2, lam2^-2) R^T."""
        return metric_tensors(self.lam, self.r1)


def metric_tensors(lam: np.ndarray, r1: np.ndarray) -> np.ndarray:
    """Metric tensors from lengths and first directions."""
    r2 = np.column_stack([-r1[:, 1], r1[:, 0]])
    return np.einsum("ei,ej,e->eij", r1, r1, lam[:, 0] ** -2.0) + np.einsum(
        "ei,ej,e->eij", r2, r2, lam[:, 1] ** -2.0
    )


def element_gradients(mesh: UnitCellMesh, rho: np.ndarray) -> np.ndarray:
    """(nt, 2) elementwise gradient of the P1 density."""
    return np.einsum("eij,ei->ej", fem.p1_gradients(mesh), rho[mesh.triangles])


def recover_gradient(mesh: UnitCellMesh, rho: np.ndarray) -> np.ndarray:
    """
    Area-weighted patch average of the elementwise density gradient.

    Returns:
        (nt, 2) recovered gradient, one constant vector per element
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (mesh.n_vertices,):
        raise ValueError(f"Density has shape {rho.shape}, mesh has {mesh.n_vertices} vertices")
    A = mesh.areas
    weighted = mesh.patch_matrix @ (A[:, None] * element_gradients(mesh, rho))
    return weighted / (mesh.patch_matrix @ A)[:, None]


def element_estimator(
    geometry: ElementGeometry, patch_matrices: np.ndarray
) -> np.ndarray:
    """
    eta_K^2 = (lam1 lam2)^-1 sum_i lam_i^2 r_i^T G r_i.

    Args:
        geometry: Element anisotropy of the current mesh
        patch_matrices: (nt, 2, 2) G per element patch

    Returns:
        (nt,) eta_K^2
    """
    lam = geometry.lam
    q1 = np.einsum("ei,eij,ej->e", geometry.r1, patch_matrices, geometry.r1)
    q2 = np.einsum("ei,eij,ej->e", geometry.r2, patch_matrices, geometry.r2)
    return (lam[:, 0] ** 2 * q1 + lam[:, 1] ** 2 * q2) / (lam[:, 0] * lam[:, 1])


def local_estimator(mesh: UnitCellMesh, rho: np.ndarray) -> EstimatorResult:
    """
    Local and global recovery-based estimators of the density gradient error.

    Raises:
        DegenerateElementError: If the mesh has a degenerate triangle
    """
    geometry = element_geometry(mesh)
    A = mesh.areas
    recovered = recover_gradient(mesh, rho)
    error = recovered - element_gradients(mesh, rho)

    # Error is constant on each element, so the patch integral is exact
    outer = A[:, None, None] * np.einsum("ei,ej->eij", error, error)
    G = (mesh.patch_matrix @ outer.reshape(-1, 4)).reshape(-1, 2, 2)
    eta_sq = np.maximum(element_estimator(geometry, G), 0.0)

    return EstimatorResult(
        recovered=recovered,
        error=error,
        patch_matrices=G,
        patch_area=mesh.patch_matrix @ A,
        eta_K=np.sqrt(eta_sq),
        eta=float(np.sqrt(eta_sq.sum())),
        geometry=geometry,
    )


def metric_from_scaled_matrix(
    G_hat: np.ndarray,
    hat_area: np.ndarray,
    n_triangles: int,
    tol: float,
    aspect_ratio_max: float = DEFAULT_ASPECT_RATIO_MAX,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Closed-form optimal lengths for scaled patch matrices.

    With eigenpairs g1 >= g2 of G_hat, lam1 = c / sqrt(g2) along the g2
    eigenvector and lam2 = c / sqrt(g1), where
    c = sqrt(tol^2 / (2 n_triangles hat_area)).

    Args:
        G_hat: (nt, 2, 2) symmetric positive semi-definite matrices
        hat_area: (nt,) reference patch areas
        n_triangles: Current element count
        tol: Target global estimator
        aspect_ratio_max: Cap on sqrt(g1 / g2)

    Returns:
        (lam (nt, 2), r1 (nt, 2), regularized (nt,) bool)

    Raises:
        ValueError: If a matrix is not symmetric
    """
    G_hat = np.asarray(G_hat, dtype=float)
    asym = np.abs(G_hat[:, 0, 1] - G_hat[:, 1, 0])
    scale = np.abs(G_hat).reshape(len(G_hat), -1).max(axis=1)
    if np.any(asym > 1e-12 * scale + 1e-300):
        raise ValueError("Patch matrices must be symmetric")

    w, V = np.linalg.eigh(G_hat)
    g2, g1 = w[:, 0], w[:, 1]

    g1_floor = np.maximum(g1, 1e-30)
    g2_floor = np.maximum.reduce(
        [g2, g1_floor / aspect_ratio_max**2, 1e-14 * g1_floor + 1e-30]
    )
    regularized = (g1_floor != g1) | (g2_floor != g2)

    c = np.sqrt(tol * tol / (2.0 * n_triangles * hat_area))
    lam = np.column_stack([c / np.sqrt(g2_floor), c / np.sqrt(g1_floor)])

    r1 = V[:, :, 0].copy()
    flip = (r1[:, 0] < 0) | ((r1[:, 0] == 0) & (r1[:, 1] < 0))
    r1[flip] *= -1.0
    return lam, r1, regularized


def predicted_estimator(
    lam: np.ndarray, r1: np.ndarray, G_hat: np.ndarray, hat_area: np.ndarray
) -> np.ndarray:
    """eta_K^2 an element with lengths lam along r1 would carry, for the same G_hat."""
    r2 = np.column_stack([-r1[:, 1], r1[:, 0]])
    q1 = np.einsum("ei,eij,ej->e", r1, G_hat, r1)
    q2 = np.einsum("ei,eij,ej->e", r2, G_hat, r2)
    return hat_area * (lam[:, 0] ** 2 * q1 + lam[:, 1] ** 2 * q2)


def predicted_count(areas: np.ndarray, lam: np.ndarray) -> float:
    """Number of unit-metric equilateral elements needed to cover the given areas."""
    return float(np.sum(areas / (UNIT_ELEMENT_AREA * lam[:, 0] * lam[:, 1])))


def compute_metric(
    mesh: UnitCellMesh,
    patch_matrices: np.ndarray,
    tol: float,
    geometry: ElementGeometry | None = None,
    aspect_ratio_max: float = DEFAULT_ASPECT_RATIO_MAX,
    h_min: float = DEFAULT_H_MIN,
    h_max: float = DEFAULT_H_MAX,
    max_elements: int | None = None,
) -> ElementMetric:
    """
    Optimal anisotropic metric per element.

    G is scaled by the patch area, the reference patch area is the patch
    area pulled back through the element map (|Delta| / (lam1 lam2)), and
    the closed-form lengths are then clamped to [h_min, h_max]. When the
    predicted element count exceeds max_elements, every length is scaled by
    sqrt(N / max_elements) before clamping.

    Args:
        mesh: Current mesh
        patch_matrices: (nt, 2, 2) G per element patch
        tol: Target global estimator
        geometry: Element geometry of mesh (computed when omitted)
        aspect_ratio_max: Aspect ratio cap
        h_min: Smallest target length
        h_max: Largest target length
        max_elements: Element cap (None disables the cap)

    Returns:
        ElementMetric
    """
    if geometry is None:
        geometry = element_geometry(mesh)
    patch_area = mesh.patch_matrix @ mesh.areas
    G_hat = patch_matrices / patch_area[:, None, None]
    hat_area = patch_area / (geometry.lam[:, 0] * geometry.lam[:, 1])

    lam, r1, regularized = metric_from_scaled_matrix(
        G_hat, hat_area, mesh.n_triangles, tol, aspect_ratio_max
    )

    def clamp(lengths):
        lengths = np.clip(lengths, h_min, h_max)
        lengths[:, 1] = np.maximum(lengths[:, 1], lengths[:, 0] / aspect_ratio_max)
        return lengths

    lam = clamp(lam)
    scale = 1.0
    count = predicted_count(mesh.areas, lam)
    if max_elements is not None and count > max_elements:
        scale = float(np.sqrt(count / max_elements))
        lam = clamp(lam * scale)
        logger.debug(
            f"Metric predicts {count:.0f} elements, scaled lengths by {scale:.3f} "
            f"to respect the cap of {max_elements}"
        )
        count = predicted_count(mesh.areas, lam)

    return ElementMetric(
        lam=lam,
        r1=r1,
        regularized=regularized,
        predicted_count=count,
        scale=scale,
    )


def vertex_metric(metric: ElementMetric, mesh: UnitCellMesh) -> np.ndarray:
    """
    Arithmetic mean of the incident element metric tensors at each vertex.

    Returns:
        (nv, 2, 2) symmetric positive-definite tensors

    Raises:
        MeshIntegrityError: If a vertex has no incident element
    """
    counts = np.asarray(mesh.incidence.sum(axis=0)).ravel()
    if np.any(counts == 0):
        raise MeshIntegrityError(
            f"{int((counts == 0).sum())} vertices have no incident element"
        )
    sums = mesh.incidence.T @ metric.tensors().reshape(-1, 4)
    return (sums / counts[:, None]).reshape(-1, 2, 2)
