"""
Design runs: the adaptive optimize/filter/adapt loop, the fixed-mesh
baseline, and post-optimization verification on a thresholded geometry.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from lib.adapt import adapt_mesh, cardinality_stagnation
from lib.config import DesignSpec
from lib.errors import CellDesignError, DegenerateDesignError, RunAborted
from lib.estimator import compute_metric, local_estimator, vertex_metric
from lib.filters import FilterChain
from lib.homogenize import (
    EngineeringModuli,
    HomogenizedTensors,
    engineering_moduli,
    homogenize,
    homogenized_tensor,
    check_bounds,
    solve_both,
)
from lib.mesh import UnitCellMesh, build_structured_mesh
from lib.optimizer import (
    ConstraintVector,
    DesignCallbacks,
    OptimizeResult,
    constraint_values,
    mass,
    optimize,
)
from lib.transfer import FieldInterpolator

logger = logging.getLogger(__name__)

TERMINATION_STAGNATION = "stagnation"
TERMINATION_KMAX = "kmax"
TERMINATION_CONVERGED = "converged"
TERMINATION_MAX_ITER = "max_iter"
TERMINATION_ABORTED = "aborted"

VERIFICATION_NOTE = (
    "verification re-solves with linear (P1) elements on a uniform mesh "
    "instead of quadratic elements"
)


@dataclass
class CellEvaluation:
    """Forward evaluation of one density: mass, constraints, tensors, moduli."""

    mass: float
    constraints: ConstraintVector
    tensors: HomogenizedTensors
    moduli: EngineeringModuli

    def to_dict(self) -> dict:
        return {
            "mass": self.mass,
            "constraints": self.constraints.to_dict(),
            "tensors": self.tensors.to_dict(),
            "moduli": self.moduli.to_dict(),
            "bounds_check": "passed",
        }


@dataclass
class RunReport:
    """
    Everything a run reports, complete or partial.

    Attributes:
        spec: DesignSpec of the run
        termination: stagnation | kmax | converged | max_iter | aborted
        iterations: Outer iterations performed (optimizer iterations for a baseline)
        final: Forward evaluation of the final density (None when aborted early)
        history: One record per outer iteration
        optimizer_log: Every optimizer iteration record, tagged with its outer iteration
        n_vertices: Vertices of the final mesh
        n_triangles: Triangles of the final mesh
        error: Message of the error that aborted the run
        wall_time: Seconds spent in the run (not part of to_dict)
    """

    spec: DesignSpec
    termination: str = TERMINATION_ABORTED
    iterations: int = 0
    final: CellEvaluation | None = None
    history: list[dict] = field(default_factory=list)
    optimizer_log: list[dict] = field(default_factory=list)
    n_vertices: int = 0
    n_triangles: int = 0
    error: str | None = None
    wall_time: float = 0.0

    @property
    def cardinality_history(self) -> list[int]:
        return [record["n_triangles"] for record in self.history]

    def to_dict(self) -> dict:
        """JSON-ready report; wall time is left out so reruns compare equal."""
        return {
            "name": self.spec.name,
            "mode": self.spec.mode,
            "seed": self.spec.seed,
            "spec": self.spec.to_dict(),
            "termination": self.termination,
            "iterations": self.iterations,
            "final": self.final.to_dict() if self.final is not None else None,
            "history": self.history,
            "n_vertices": self.n_vertices,
            "n_triangles": self.n_triangles,
            "error": self.error,
            "metadata": {"element": "P1", "verification": VERIFICATION_NOTE},
        }


@dataclass
class DesignResult:
    """
    Final state of a run.

    Attributes:
        mesh: Final mesh
        rho: Final nodal (physical) density on mesh
        tensors: E^H and k^H of the final density
        report: RunReport
        metric: (nv, 2, 2) target metric at the final vertices (None for baselines)
    """

    mesh: UnitCellMesh
    rho: np.ndarray
    tensors: HomogenizedTensors
    report: RunReport
    metric: np.ndarray | None = None


@dataclass
class VerificationResult:
    tensors: HomogenizedTensors
    moduli: EngineeringModuli
    material_fraction: float
    n_triangles: int
    threshold: float
    h: float

    def to_dict(self) -> dict:
        return {
            "tensors": self.tensors.to_dict(),
            "moduli": self.moduli.to_dict(),
            "material_fraction": self.material_fraction,
            "n_triangles": self.n_triangles,
            "threshold": self.threshold,
            "h": self.h,
            "bounds_check": "passed",
            "note": VERIFICATION_NOTE,
        }


def evaluate_design(
    mesh: UnitCellMesh, rho: np.ndarray, spec: DesignSpec, parallel: bool | None = None
) -> CellEvaluation:
    """
    Solve both cell-problem families for rho and collect every reported quantity.

    Raises:
        DegenerateDesignError: If a ratio denominator is not positive
        DegenerateTensorError: If E^H is singular or badly conditioned, or a
            diagonal entry of E^H or k^H leaves [rho_min^p * bulk, bulk]
    """
    tensors, _, _ = homogenize(mesh, rho, spec.law(), spec.plane, parallel)
    check_bounds(tensors, spec.law(), spec.rho_min, spec.plane)
    return CellEvaluation(
        mass=mass(mesh, rho),
        constraints=ConstraintVector(constraint_values(tensors), spec.lower, spec.upper),
        tensors=tensors,
        moduli=engineering_moduli(tensors.E, tensors.k),
    )


def initial_density(mesh: UnitCellMesh, spec: DesignSpec) -> np.ndarray:
    """Periodic nodal density drawn uniformly from [rho_min, 1] with the DesignSpec seed."""
    rng = np.random.default_rng(spec.seed)
    return mesh.expand(rng.uniform(spec.rho_min, 1.0, size=mesh.n_masters))


def _optimize_on(
    mesh: UnitCellMesh,
    rho: np.ndarray,
    spec: DesignSpec,
    max_iter: int,
    log: list[dict],
    outer: int,
    chain: FilterChain | None = None,
    parallel: bool | None = None,
) -> tuple[DesignCallbacks, OptimizeResult]:
    callbacks = DesignCallbacks(mesh, spec.law(), spec.plane, chain, parallel)

    def record(entry: dict) -> None:
        log.append({"outer": outer, **entry})

    result = optimize(
        callbacks.objective,
        callbacks.constraints,
        spec.lower,
        spec.upper,
        callbacks.gradients,
        rho[mesh.master_vertices],
        spec.topt,
        max_iter,
        xmin=spec.rho_min,
        xmax=1.0,
        on_iteration=record,
    )
    return callbacks, result


def _abort(
    report: RunReport, error: Exception, started: float, mesh: UnitCellMesh
) -> RunAborted:
    report.termination = TERMINATION_ABORTED
    report.n_vertices, report.n_triangles = mesh.n_vertices, mesh.n_triangles
    report.error = f"{type(error).__name__}: {error}"
    report.wall_time = time.perf_counter() - started
    logger.error(f"Run {report.spec.name} aborted after {report.iterations} iterations: {error}")
    return RunAborted(f"Design run {report.spec.name!r} aborted: {error}", report, error)


def run_design(spec: DesignSpec, parallel: bool | None = None) -> DesignResult:
    """
    Alternate optimization, filtering and anisotropic remeshing until the
    mesh cardinality stagnates.

    Each outer iteration k optimizes on the current mesh (it_first
    iterations for k = 0, it_rest afterwards), applies the Helmholtz and
    Heaviside filters while k < kfmax, estimates the density gradient
    error, turns it into a metric and adapts the mesh to it. The loop stops
    when the relative change of the triangle count drops to ctol or after
    kmax iterations.

    Raises:
        RunAborted: On any hard error, carrying the partial RunReport
    """
    started = time.perf_counter()
    report = RunReport(spec=spec)
    mesh = build_structured_mesh(spec.n)
    rho = initial_density(mesh, spec)
    metric = None
    logger.info(
        f"Starting adaptive design run {spec.name!r} on a {spec.n}x{spec.n} mesh "
        f"(seed {spec.seed})"
    )

    try:
        report.termination = TERMINATION_KMAX
        for k in range(spec.kmax):
            max_iter = spec.it_first if k == 0 else spec.it_rest
            _, result = _optimize_on(
                mesh, rho, spec, max_iter, report.optimizer_log, k, parallel=parallel
            )
            rho = mesh.expand(result.x)
            last = result.history[-1]

            filtered = k < spec.kfmax
            if filtered:
                rho = FilterChain(mesh, spec.filter_params(), spec.rho_min).apply(rho)

            estimate = local_estimator(mesh, rho)
            element_metric = compute_metric(
                mesh,
                estimate.patch_matrices,
                spec.tol,
                estimate.geometry,
                aspect_ratio_max=spec.aspect_ratio_max,
                h_min=spec.h_min,
                h_max=spec.h_max,
                max_elements=spec.max_elements,
            )
            adapted = adapt_mesh(
                mesh, vertex_metric(element_metric, mesh), rho, spec.adapt_params()
            )
            err_c = cardinality_stagnation(mesh, adapted.mesh)

            report.history.append(
                {
                    "k": k,
                    "mass": last["mass"],
                    "constraints": last["constraints"],
                    "kkt": result.kkt,
                    "optimizer_iterations": result.iterations,
                    "fallbacks": result.fallbacks,
                    "filtered": filtered,
                    "eta": estimate.eta,
                    "predicted_count": element_metric.predicted_count,
                    "n_triangles": adapted.mesh.n_triangles,
                    "err_c": err_c,
                    "in_band": adapted.in_band,
                    "best_effort": adapted.best_effort,
                }
            )
            report.iterations = k + 1
            logger.info(
                f"Outer iteration {k}: mass {last['mass']:.6f}, "
                f"{mesh.n_triangles} -> {adapted.mesh.n_triangles} triangles, errC {err_c:.4f}"
            )

            mesh, rho, metric = adapted.mesh, adapted.rho, adapted.metric
            if err_c <= spec.ctol:
                report.termination = TERMINATION_STAGNATION
                break

        report.final = evaluate_design(mesh, rho, spec, parallel)
    except (CellDesignError, ValueError) as e:
        raise _abort(report, e, started, mesh) from e

    report.n_vertices, report.n_triangles = mesh.n_vertices, mesh.n_triangles
    report.wall_time = time.perf_counter() - started
    logger.info(
        f"Design run {spec.name!r} finished ({report.termination}) after "
        f"{report.iterations} iterations: mass {report.final.mass:.6f}, "
        f"{mesh.n_triangles} triangles"
    )
    return DesignResult(mesh, rho, report.final.tensors, report, metric)


def run_baseline(spec: DesignSpec, parallel: bool | None = None) -> DesignResult:
    """
    Single optimization of the filtered density on a fixed structured mesh.

    The filter chain sits inside the objective, constraints and
    sensitivities, and the reported density is the physical one.

    Raises:
        RunAborted: On any hard error, carrying the partial RunReport
    """
    started = time.perf_counter()
    report = RunReport(spec=spec)
    mesh = build_structured_mesh(spec.baseline_n)
    rho = initial_density(mesh, spec)
    logger.info(
        f"Starting baseline run {spec.name!r} on a {spec.baseline_n}x{spec.baseline_n} "
        f"mesh (seed {spec.seed})"
    )

    try:
        chain = FilterChain(mesh, spec.filter_params(), spec.rho_min)
        callbacks, result = _optimize_on(
            mesh, rho, spec, spec.it_baseline, report.optimizer_log, 0, chain, parallel
        )
        for entry in result.history:
            report.history.append(
                {
                    "k": entry["iteration"] - 1,
                    "mass": entry["mass"],
                    "constraints": entry["constraints"],
                    "kkt": entry["kkt"],
                    "n_triangles": mesh.n_triangles,
                }
            )
        report.iterations = result.iterations
        report.termination = (
            TERMINATION_CONVERGED if result.converged else TERMINATION_MAX_ITER
        )
        rho = callbacks.physical_density(result.x)
        report.final = evaluate_design(mesh, rho, spec, parallel)
    except (CellDesignError, ValueError) as e:
        raise _abort(report, e, started, mesh) from e

    report.n_vertices, report.n_triangles = mesh.n_vertices, mesh.n_triangles
    report.wall_time = time.perf_counter() - started
    logger.info(
        f"Baseline run {spec.name!r} finished ({report.termination}): "
        f"mass {report.final.mass:.6f}"
    )
    return DesignResult(mesh, rho, report.final.tensors, report)


def run(spec: DesignSpec, parallel: bool | None = None) -> DesignResult:
    """Dispatch on spec.mode."""
    if spec.mode == "baseline":
        return run_baseline(spec, parallel)
    return run_design(spec, parallel)


def verify(
    mesh: UnitCellMesh, rho: np.ndarray, spec: DesignSpec, parallel: bool | None = None
) -> VerificationResult:
    """
    Homogenize the thresholded design on a fine uniform mesh.

    The density is sampled at the element centroids of a structured mesh of
    spacing verify_h. Elements at or above verify_threshold become full
    material, the rest get rho_min.

    Raises:
        DegenerateDesignError: If no element survives the threshold
        DegenerateTensorError: If the verified tensors leave their bounds
    """
    n = max(1, int(round(1.0 / spec.verify_h)))
    target = build_structured_mesh(n)
    centroids = target.vertices[target.triangles].mean(axis=1)
    sampled = FieldInterpolator(mesh).interpolate(centroids, np.asarray(rho, dtype=float))

    material = sampled >= spec.verify_threshold
    if not material.any():
        raise DegenerateDesignError(
            f"No material left after thresholding at {spec.verify_threshold} "
            f"(max sampled density {sampled.max():.4f})"
        )
    element_rho = np.where(material, 1.0, spec.rho_min)
    counts = np.asarray(target.incidence.sum(axis=0)).ravel()
    nodal = (target.incidence.T @ element_rho) / counts

    elastic, thermal = solve_both(
        target, nodal, spec.law(), spec.plane, parallel, element_rho=element_rho
    )
    tensors = HomogenizedTensors(E=homogenized_tensor(elastic), k=homogenized_tensor(thermal))
    check_bounds(tensors, spec.law(), spec.rho_min, spec.plane)
    fraction = float(np.dot(target.areas, material))
    logger.info(
        f"Verified on {target.n_triangles} triangles: material fraction {fraction:.4f}, "
        f"E1111 {tensors.E[0, 0]:.6g}"
    )
    return VerificationResult(
        tensors=tensors,
        moduli=engineering_moduli(tensors.E, tensors.k),
        material_fraction=fraction,
        n_triangles=target.n_triangles,
        threshold=spec.verify_threshold,
        h=1.0 / n,
    )
