"""
Constrained mass minimization on the unit cell.

Constraint evaluation from the homogenized tensors, self-adjoint
sensitivities, and a Method of Moving Asymptotes solver that treats every
two-sided box constraint as a pair of one-sided inequalities.
"""

import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from lib import fem
from lib.cell_problem import CellSolution
from lib.errors import DegenerateDesignError, OptimizationError
from lib.filters import FilterChain
from lib.homogenize import HomogenizedTensors, homogenize, homogenized_tensor
from lib.mesh import UnitCellMesh
from physics.elastic import PLANE_STRESS

logger = logging.getLogger(__name__)

CONSTRAINT_NAMES = ("E1111", "E1212", "E2222/E1111", "k11", "k22/k11")


@dataclass
class ConstraintVector:
    """Five constraint values in fixed order with their box bounds."""

    values: np.ndarray
    lower: np.ndarray = field(default_factory=lambda: np.full(5, -np.inf))
    upper: np.ndarray = field(default_factory=lambda: np.full(5, np.inf))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError(
                f"Constraint bounds are not ordered: lower {self.lower.tolist()}, "
                f"upper {self.upper.tolist()}"
            )

    def relative_violation(self) -> np.ndarray:
        """Violation of each entry relative to the violated bound (0 when inside)."""
        below = np.where(
            self.values < self.lower,
            (self.lower - self.values) / np.maximum(np.abs(self.lower), 1e-12),
            0.0,
        )
        above = np.where(
            self.values > self.upper,
            (self.values - self.upper) / np.maximum(np.abs(self.upper), 1e-12),
            0.0,
        )
        return np.maximum(below, above)

    def satisfied(self, slack: float = 0.0) -> bool:
        return bool(np.all(self.relative_violation() <= slack))

    def to_dict(self) -> dict:
        return {
            name: {"value": float(v), "lower": float(lo), "upper": float(hi)}
            for name, v, lo, hi in zip(CONSTRAINT_NAMES, self.values, self.lower, self.upper)
        }


@dataclass(frozen=True)
class SensitivityBundle:
    """
    Attributes:
        mass_gradient: (nv,) gradient of the mass
        jacobian: (5, nv) Jacobian of the constraint vector
    """

    mass_gradient: np.ndarray
    jacobian: np.ndarray


def mass(mesh: UnitCellMesh, rho: np.ndarray) -> float:
    """Integral of the P1 density over the cell."""
    return float(np.dot(fem.lumped_areas(mesh), rho))


def constraint_values(tensors: HomogenizedTensors) -> np.ndarray:
    """
    The five constrained quantities of a pair of homogenized tensors.

    Raises:
        DegenerateDesignError: If E1111 or k11 is not positive
    """
    E, k = tensors.E, tensors.k
    if E[0, 0] <= 0 or k[0, 0] <= 0:
        raise DegenerateDesignError(
            f"Ratio denominators must be positive (E1111={E[0, 0]:.3e}, k11={k[0, 0]:.3e})"
        )
    return np.array(
        [E[0, 0], E[2, 2], E[1, 1] / E[0, 0], k[0, 0], k[1, 1] / k[0, 0]]
    )


def evaluate_constraints(
    mesh: UnitCellMesh,
    rho: np.ndarray,
    law: fem.MaterialLaw,
    plane: str = PLANE_STRESS,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
) -> ConstraintVector:
    """Solve both cell-problem families and form the constraint vector."""
    tensors, _, _ = homogenize(mesh, rho, law, plane)
    values = constraint_values(tensors)
    return ConstraintVector(
        values,
        lower if lower is not None else np.full(5, -np.inf),
        upper if upper is not None else np.full(5, np.inf),
    )


def _tensor_entry_gradient(solution: CellSolution, c: int, d: int) -> np.ndarray:
    """Nodal gradient of H_cd through the element-mean density."""
    D = solution.physics.constitutive()
    n = solution.physics.exponent
    mesh = solution.mesh
    eps = solution.corrected
    energy = np.einsum("ei,ij,ej->e", eps[c], D, eps[d])
    per_element = n * solution.element_rho ** (n - 1.0) * mesh.areas * energy
    return mesh.incidence.T @ (per_element / 3.0)


def sensitivities(
    mesh: UnitCellMesh,
    rho: np.ndarray,
    law: fem.MaterialLaw,
    fluctuations: tuple[CellSolution, CellSolution],
    chain: FilterChain | None = None,
) -> SensitivityBundle:
    """
    Gradients of the mass and of the constraint vector with respect to nodal rho.

    The cell problems are self-adjoint, so dH_cd/d rho_e needs only the
    corrected strains of cases c and d. With a filter chain, rho is the
    design density, the tensors belong to the projected density, and every
    row is pulled back through the chain.

    Args:
        mesh: Current mesh
        rho: Nodal design density
        law: Bulk material
        fluctuations: (elastic, thermal) solutions for the physical density
        chain: Optional filter chain between design and physical density

    Raises:
        StaleSolutionError: If the solutions were computed for another density
        DegenerateDesignError: If a ratio denominator is not positive
    """
    elastic, thermal = fluctuations
    physical = chain.apply(rho) if chain is not None else np.asarray(rho, dtype=float)
    elastic.check_current(mesh, physical)
    thermal.check_current(mesh, physical)

    E = homogenized_tensor(elastic)
    k = homogenized_tensor(thermal)
    if E[0, 0] <= 0 or k[0, 0] <= 0:
        raise DegenerateDesignError("Ratio denominators must be positive")

    dE11 = _tensor_entry_gradient(elastic, 0, 0)
    dE22 = _tensor_entry_gradient(elastic, 1, 1)
    dE33 = _tensor_entry_gradient(elastic, 2, 2)
    dk11 = _tensor_entry_gradient(thermal, 0, 0)
    dk22 = _tensor_entry_gradient(thermal, 1, 1)

    jacobian = np.vstack(
        [
            dE11,
            dE33,
            (dE22 * E[0, 0] - E[1, 1] * dE11) / E[0, 0] ** 2,
            dk11,
            (dk22 * k[0, 0] - k[1, 1] * dk11) / k[0, 0] ** 2,
        ]
    )
    mass_gradient = fem.lumped_areas(mesh)

    if chain is not None:
        pullback = chain.derivative(rho)
        mass_gradient = pullback.rmatvec(mass_gradient)
        jacobian = np.vstack([pullback.rmatvec(row) for row in jacobian])

    return SensitivityBundle(mass_gradient=mass_gradient, jacobian=jacobian)


# -- Method of Moving Asymptotes ---------------------------------------------


@dataclass
class OptimizeResult:
    """
    Attributes:
        x: Last iterate (box feasible)
        iterations: Optimizer iterations performed
        kkt: KKT residual at x
        converged: True when kkt <= the requested tolerance
        fallbacks: Iterations whose subproblem failed and kept the previous iterate
        history: One record per iteration (objective, constraints, kkt, feasibility)
    """

    x: np.ndarray
    iterations: int
    kkt: float
    converged: bool
    fallbacks: int = 0
    history: list[dict] = field(default_factory=list)


class MMA:
    """
    Moving-asymptote approximation with artificial variables y_i.

    Solves min f0(x) s.t. f_i(x) <= 0, xmin <= x <= xmax through the convex
    separable subproblem, maximizing its dual by projected Newton steps.
    """

    def __init__(self, xmin: np.ndarray, xmax: np.ndarray, m: int):
        self.xmin = xmin
        self.xmax = xmax
        self.m = m

        self.asymptote_init = 0.5
        self.asymptote_contract = 0.7
        self.asymptote_relax = 1.2
        self.move_limit = 0.2
        self.raa0 = 1e-5
        self.c = np.full(m, 1000.0)
        self.d = np.ones(m)

        self.iteration = 0
        self.x1: np.ndarray | None = None
        self.x2: np.ndarray | None = None
        self.L: np.ndarray | None = None
        self.U: np.ndarray | None = None

    def _update_asymptotes(self, x: np.ndarray) -> None:
        span = self.xmax - self.xmin
        if self.iteration < 2:
            self.L = x - self.asymptote_init * span
            self.U = x + self.asymptote_init * span
            return
        sign = (x - self.x1) * (self.x1 - self.x2)
        gamma = np.ones_like(x)
        gamma[sign > 0] = self.asymptote_relax
        gamma[sign < 0] = self.asymptote_contract
        L = x - gamma * (self.x1 - self.L)
        U = x + gamma * (self.U - self.x1)
        self.L = np.clip(L, x - 10.0 * span, x - 0.01 * span)
        self.U = np.clip(U, x + 0.01 * span, x + 10.0 * span)

    def _approximation(self, x, g0, A, f):
        span = self.xmax - self.xmin
        Ux, xL = self.U - x, x - self.L

        def split(grad):
            pos, neg = np.maximum(grad, 0.0), np.maximum(-grad, 0.0)
            reg = self.raa0 / span
            return (
                Ux**2 * (1.001 * pos + 0.001 * neg + reg),
                xL**2 * (0.001 * pos + 1.001 * neg + reg),
            )

        p0, q0 = split(g0)
        P, Q = split(A) if self.m else (np.zeros((0, len(x))), np.zeros((0, len(x))))
        b = (P / Ux).sum(axis=1) + (Q / xL).sum(axis=1) - f
        return p0, q0, P, Q, b

    def step(
        self, x: np.ndarray, g0: np.ndarray, f: np.ndarray, A: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, bool]:
        """
        One MMA iteration.

        Args:
            x: Current iterate
            g0: Objective gradient
            f: Constraint values (<= 0 is feasible)
            A: (m, n) constraint gradients

        Returns:
            (new iterate, multipliers, subproblem solved)
        """
        self._update_asymptotes(x)
        span = self.xmax - self.xmin
        alpha = np.maximum.reduce(
            [self.xmin, self.L + 0.1 * (x - self.L), x - self.move_limit * span]
        )
        beta = np.minimum.reduce(
            [self.xmax, self.U - 0.1 * (self.U - x), x + self.move_limit * span]
        )
        p0, q0, P, Q, b = self._approximation(x, g0, A, f)
        lam, ok = self._solve_dual(p0, q0, P, Q, b, alpha, beta)

        self.x2, self.x1 = self.x1, x.copy()
        self.iteration += 1
        if not ok:
            return x.copy(), lam, False
        return self._primal(lam, p0, q0, P, Q, alpha, beta), lam, True

    def _primal(self, lam, p0, q0, P, Q, alpha, beta):
        Pl = p0 + lam @ P
        Ql = q0 + lam @ Q
        sp, sq = np.sqrt(Pl), np.sqrt(Ql)
        x = (sp * self.L + sq * self.U) / (sp + sq)
        return np.clip(x, alpha, beta)

    def _dual(self, lam, p0, q0, P, Q, b, alpha, beta):
        x = self._primal(lam, p0, q0, P, Q, alpha, beta)
        y = np.maximum(0.0, (lam - self.c) / self.d)
        Ux, xL = self.U - x, x - self.L
        Pl, Ql = p0 + lam @ P, q0 + lam @ Q
        value = (
            np.sum(Pl / Ux + Ql / xL)
            + np.sum(self.c * y + 0.5 * self.d * y * y - lam * y)
            - lam @ b
        )
        grad = (P / Ux).sum(axis=1) + (Q / xL).sum(axis=1) - y - b

        free = (x > alpha) & (x < beta)
        dh = P / Ux**2 - Q / xL**2
        curvature = 2.0 * Pl / Ux**3 + 2.0 * Ql / xL**3
        H = -(dh[:, free] / curvature[free]) @ dh[:, free].T
        H -= np.diag(np.where(lam > self.c, 1.0 / self.d, 0.0))
        return value, grad, H

    def _solve_dual(self, p0, q0, P, Q, b, alpha, beta, max_iter: int = 100):
        lam = np.ones(self.m)
        if self.m == 0:
            return lam, True
        value, grad, H = self._dual(lam, p0, q0, P, Q, b, alpha, beta)
        for _ in range(max_iter):
            projected = np.where((lam <= 0) & (grad < 0), 0.0, grad)
            if np.max(np.abs(projected)) <= 1e-10 * (1.0 + np.max(np.abs(b))):
                return lam, True

            active = (lam <= 0) & (grad < 0)
            direction = np.zeros(self.m)
            free = ~active
            Hf = H[np.ix_(free, free)]
            shift = 1e-12 * (1.0 + np.abs(np.diag(Hf)).max(initial=0.0))
            try:
                direction[free] = np.linalg.solve(Hf - shift * np.eye(free.sum()), -grad[free])
            except np.linalg.LinAlgError:
                direction[free] = grad[free]
            if direction @ grad <= 0:
                direction = projected

            # Step halving keeps the dual ascent monotone
            t = 1.0
            while t > 1e-12:
                trial = np.maximum(lam + t * direction, 0.0)
                t_value, t_grad, t_H = self._dual(trial, p0, q0, P, Q, b, alpha, beta)
                if t_value >= value - 1e-14 * abs(value):
                    break
                t *= 0.5
            else:
                return lam, self._dual_converged(lam, grad, b, 1e-6)
            if np.max(np.abs(trial - lam)) <= 1e-14 * (1.0 + np.max(lam)):
                return trial, self._dual_converged(trial, t_grad, b, 1e-6)
            lam, value, grad, H = trial, t_value, t_grad, t_H
        return lam, self._dual_converged(lam, grad, b, 1e-6)

    def _dual_converged(self, lam, grad, b, tol) -> bool:
        projected = np.where((lam <= 0) & (grad < 0), 0.0, grad)
        return bool(np.max(np.abs(projected)) <= tol * (1.0 + np.max(np.abs(b))))


def _split_bounds(c_lower: np.ndarray, c_upper: np.ndarray):
    """Index/sign/scale of each one-sided inequality from two-sided bounds."""
    index, sign, bound = [], [], []
    for i, (lo, hi) in enumerate(zip(c_lower, c_upper)):
        scale = max(abs(lo) if np.isfinite(lo) else 0.0, abs(hi) if np.isfinite(hi) else 0.0, 1e-3)
        if np.isfinite(lo):
            index.append(i)
            sign.append(-1.0 / scale)
            bound.append(lo)
        if np.isfinite(hi):
            index.append(i)
            sign.append(1.0 / scale)
            bound.append(hi)
    return np.array(index, dtype=np.int64), np.array(sign), np.array(bound)


def kkt_residual(
    x: np.ndarray,
    xmin: np.ndarray,
    xmax: np.ndarray,
    g0: np.ndarray,
    f: np.ndarray,
    A: np.ndarray,
    lam: np.ndarray,
) -> tuple[float, float]:
    """
    KKT residual and feasibility measure.

    The residual is the largest of the relative projected stationarity,
    the constraint violation and the complementarity |lam_i f_i|.
    """
    r = g0 + lam @ A if len(lam) else g0
    stationarity = np.max(np.abs(x - np.clip(x - r, xmin, xmax)), initial=0.0)
    stationarity /= 1.0 + np.max(np.abs(g0), initial=0.0)
    feasibility = float(np.max(np.maximum(f, 0.0), initial=0.0))
    complementarity = float(np.max(np.abs(lam * f), initial=0.0))
    return float(max(stationarity, feasibility, complementarity)), feasibility


def _finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise OptimizationError(f"Non-finite {name} returned by the optimization callbacks")


def optimize(
    J: Callable[[np.ndarray], float],
    C: Callable[[np.ndarray], np.ndarray],
    c_lower: np.ndarray,
    c_upper: np.ndarray,
    G: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x0: np.ndarray,
    topt: float,
    max_iter: int,
    xmin: float | np.ndarray = 0.0,
    xmax: float | np.ndarray = 1.0,
    on_iteration: Callable[[dict], None] | None = None,
) -> OptimizeResult:
    """
    Minimize J subject to c_lower <= C(x) <= c_upper and the box [xmin, xmax].

    Args:
        J: Objective
        C: Constraint vector
        c_lower: Lower bounds (-inf drops the inequality)
        c_upper: Upper bounds (inf drops the inequality)
        G: Returns (objective gradient, constraint Jacobian)
        x0: Starting point, clipped into the box
        topt: KKT tolerance for early termination
        max_iter: Iteration cap
        xmin: Lower box bound
        xmax: Upper box bound
        on_iteration: Called with each iteration record

    Returns:
        OptimizeResult

    Raises:
        OptimizationError: If a callback returns NaN or inf
    """
    n = len(x0)
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), (n,)).copy()
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), (n,)).copy()
    x = np.clip(np.asarray(x0, dtype=float), xmin, xmax)
    index, sign, bound = _split_bounds(np.asarray(c_lower, float), np.asarray(c_upper, float))

    def evaluate(point):
        obj = J(point)
        cons = np.asarray(C(point), dtype=float)
        g0, jac = G(point)
        _finite("objective", obj)
        _finite("constraints", cons)
        _finite("objective gradient", g0)
        _finite("constraint Jacobian", jac)
        return obj, cons, np.asarray(g0, float), np.asarray(jac, float).reshape(len(cons), n)

    obj, cons, g0, jac = evaluate(x)
    scale = abs(obj) if abs(obj) > 1e-12 else 1.0

    def scaled(cons, jac):
        f = sign * (cons[index] - bound)
        A = sign[:, None] * jac[index] if len(index) else np.zeros((0, n))
        return f, A

    mma = MMA(xmin, xmax, len(index))
    history: list[dict] = []
    fallbacks = 0
    kkt = float("inf")
    iterations = 0
    for iterations in range(1, max_iter + 1):
        f, A = scaled(cons, jac)
        x_new, lam, ok = mma.step(x, g0 / scale, f, A)
        if not ok:
            fallbacks += 1
            logger.warning(
                f"MMA subproblem failed at iteration {iterations}; keeping the previous iterate"
            )
        x = x_new
        obj, cons, g0, jac = evaluate(x)
        f, A = scaled(cons, jac)
        kkt, feasibility = kkt_residual(x, xmin, xmax, g0 / scale, f, A, lam)

        record = {
            "iteration": iterations,
            "mass": float(obj),
            "constraints": [float(v) for v in cons],
            "kkt": kkt,
            "feasibility": feasibility,
        }
        history.append(record)
        logger.info(json.dumps(record))
        if on_iteration is not None:
            on_iteration(record)
        if kkt <= topt:
            break

    return OptimizeResult(
        x=x,
        iterations=iterations,
        kkt=kkt,
        converged=kkt <= topt,
        fallbacks=fallbacks,
        history=history,
    )


# -- Design callbacks ----------------------------------------------------------


class DesignCallbacks:
    """
    Objective, constraints and gradients of the cell design on one mesh.

    The design variables are master-vertex densities; every slave copies
    its master. With a filter chain the quantities are evaluated on the
    projected density. Solutions are cached for the most recent iterate so
    J, C and G at the same point share one pair of solves.
    """

    def __init__(
        self,
        mesh: UnitCellMesh,
        law: fem.MaterialLaw,
        plane: str = PLANE_STRESS,
        chain: FilterChain | None = None,
        parallel: bool | None = None,
    ):
        self.mesh = mesh
        self.law = law
        self.plane = plane
        self.chain = chain
        self.parallel = parallel
        self._key: bytes | None = None
        self._state: dict = {}

    def design_density(self, x: np.ndarray) -> np.ndarray:
        return self.mesh.expand(np.asarray(x, dtype=float))

    def physical_density(self, x: np.ndarray) -> np.ndarray:
        rho = self.design_density(x)
        return self.chain.apply(rho) if self.chain is not None else rho

    def _evaluate(self, x: np.ndarray) -> dict:
        key = np.asarray(x, dtype=float).tobytes()
        if key != self._key:
            rho = self.design_density(x)
            physical = self.chain.apply(rho) if self.chain is not None else rho
            tensors, elastic, thermal = homogenize(
                self.mesh, physical, self.law, self.plane, self.parallel
            )
            self._state = {
                "rho": rho,
                "physical": physical,
                "tensors": tensors,
                "solutions": (elastic, thermal),
                "constraints": constraint_values(tensors),
            }
            self._key = key
        return self._state

    def objective(self, x: np.ndarray) -> float:
        return mass(self.mesh, self._evaluate(x)["physical"])

    def constraints(self, x: np.ndarray) -> np.ndarray:
        return self._evaluate(x)["constraints"]

    def tensors(self, x: np.ndarray) -> HomogenizedTensors:
        return self._evaluate(x)["tensors"]

    def gradients(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        state = self._evaluate(x)
        bundle = sensitivities(
            self.mesh, state["rho"], self.law, state["solutions"], self.chain
        )
        return self.mesh.fold(bundle.mass_gradient), self.mesh.fold(bundle.jacobian.T).T
