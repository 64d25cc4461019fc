"""
Density filters: periodic Helmholtz smoothing and tanh Heaviside projection.

The chain rho -> clamp(F rho) -> clamp(H(.)) and its derivative are exposed
as a scipy LinearOperator so sensitivities can be pulled back through it.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator

from lib import fem
from lib.mesh import UnitCellMesh

logger = logging.getLogger(__name__)

# Below this sharpness the projection is evaluated by its series expansion
BETA_SERIES = 1e-6


@dataclass(frozen=True)
class FilterParams:
    """
    Attributes:
        tau: Helmholtz diffusion radius (cell units)
        beta: Heaviside sharpness
        eta: Projection threshold, in (0, 1)
    """

    tau: float = 0.02
    beta: float = 5.0
    eta: float = 0.5

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError(f"Filter radius tau must be >= 0, got {self.tau}")
        if not self.beta >= 0:
            raise ValueError(f"Heaviside sharpness beta must be >= 0, got {self.beta}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"Heaviside threshold eta must lie in (0, 1), got {self.eta}")


class HelmholtzFilter:
    """
    Periodic P1 solve of (tau^2 K + M) rho_f = M rho on a fixed mesh.

    The factorization is built once per (mesh, tau) and reused.
    """

    def __init__(self, mesh: UnitCellMesh, tau: float):
        if tau < 0:
            raise ValueError(f"Filter radius tau must be >= 0, got {tau}")
        self.mesh = mesh
        self.tau = tau
        self.M = fem.assemble_mass(mesh)
        B = fem.scalar_gradient_operator(fem.p1_gradients(mesh))
        K = fem.assemble_matrix(mesh, B, np.eye(2), np.ones(mesh.n_triangles))
        self.dof_map = fem.PeriodicDofMap(mesh, n_components=1, pin_anchor=False)
        self.system = fem.FactorizedSystem(
            self.dof_map.reduce_matrix(tau * tau * K + self.M), label="Helmholtz filter"
        )

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Unclamped filtered field P A^-1 P^T M rho."""
        reduced = self.system.solve(self.dof_map.reduce_vector(self.M @ rho))
        return self.dof_map.prolong(reduced)

    def apply_transpose(self, g: np.ndarray) -> np.ndarray:
        """Transpose action M P A^-1 P^T g."""
        reduced = self.system.solve(self.dof_map.reduce_vector(g))
        return self.M @ self.dof_map.prolong(reduced)


def helmholtz_filter(
    mesh: UnitCellMesh, rho: np.ndarray, tau: float, rho_min: float = 0.0
) -> np.ndarray:
    """
    Smooth a nodal density with the periodic Helmholtz filter and clamp it.

    Args:
        mesh: Unit-cell mesh
        rho: Nodal density
        tau: Diffusion radius (tau = 0 returns rho up to solver tolerance)
        rho_min: Lower clamp

    Returns:
        Filtered density in [rho_min, 1]

    Raises:
        ValueError: If tau < 0
    """
    return np.clip(HelmholtzFilter(mesh, tau).apply(rho), rho_min, 1.0)


def _tanh_parts(x: np.ndarray, beta: float, eta: float) -> tuple[np.ndarray, float]:
    num = np.tanh(beta * eta) + np.tanh(beta * (x - eta))
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return num, den


def heaviside_raw(x: np.ndarray, beta: float, eta: float = 0.5) -> np.ndarray:
    """Unclamped tanh projection, with its series limit for tiny beta."""
    x = np.asarray(x, dtype=float)
    if beta < BETA_SERIES:
        a = eta**3 + (x - eta) ** 3
        b = eta**3 + (1.0 - eta) ** 3
        return x - beta * beta * (a - x * b) / 3.0
    num, den = _tanh_parts(x, beta, eta)
    return num / den


def heaviside_slope(x: np.ndarray, beta: float, eta: float = 0.5) -> np.ndarray:
    """Pointwise derivative of heaviside_raw."""
    x = np.asarray(x, dtype=float)
    if beta < BETA_SERIES:
        b = eta**3 + (1.0 - eta) ** 3
        return 1.0 - beta * beta * ((x - eta) ** 2 - b / 3.0)
    _, den = _tanh_parts(x, beta, eta)
    return beta / (np.cosh(beta * (x - eta)) ** 2 * den)


def heaviside_project(
    rho_f: np.ndarray, beta: float, eta: float = 0.5, rho_min: float = 0.0
) -> np.ndarray:
    """Project a filtered density toward 0/1 and clamp it into [rho_min, 1]."""
    return np.clip(heaviside_raw(rho_f, beta, eta), rho_min, 1.0)


def _inside(x: np.ndarray, lower: float) -> np.ndarray:
    return ((x > lower) & (x < 1.0)).astype(float)


class FilterChain:
    """
    Helmholtz smoothing followed by Heaviside projection on one mesh.

    Clamped entries have zero derivative.
    """

    def __init__(self, mesh: UnitCellMesh, params: FilterParams, rho_min: float):
        self.mesh = mesh
        self.params = params
        self.rho_min = rho_min
        self.helmholtz = HelmholtzFilter(mesh, params.tau)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Physical density rho_bar for a design density rho."""
        return self.stages(rho)[1]

    def stages(self, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(filtered, projected) densities."""
        p = self.params
        filtered = np.clip(self.helmholtz.apply(rho), self.rho_min, 1.0)
        return filtered, heaviside_project(filtered, p.beta, p.eta, self.rho_min)

    def derivative(self, rho: np.ndarray) -> LinearOperator:
        """
        Jacobian of the chain at rho.

        matvec is the directional derivative, rmatvec pulls a sensitivity
        vector back to the design density.
        """
        p = self.params
        raw = self.helmholtz.apply(rho)
        filtered = np.clip(raw, self.rho_min, 1.0)
        projected = heaviside_raw(filtered, p.beta, p.eta)
        slope = (
            heaviside_slope(filtered, p.beta, p.eta)
            * _inside(raw, self.rho_min)
            * _inside(projected, self.rho_min)
        )
        n = self.mesh.n_vertices

        def matvec(v):
            return slope * self.helmholtz.apply(np.ravel(v))

        def rmatvec(g):
            return self.helmholtz.apply_transpose(slope * np.ravel(g))

        return LinearOperator((n, n), matvec=matvec, rmatvec=rmatvec, dtype=float)


def filter_chain_derivative(
    mesh: UnitCellMesh, rho: np.ndarray, params: FilterParams, rho_min: float = 0.0
) -> LinearOperator:
    """Linear operator d rho_bar / d rho of heaviside(helmholtz(rho)) at rho."""
    return FilterChain(mesh, params, rho_min).derivative(rho)
