"""
Frames and altair charts for the run dashboard.

Kept outside the Streamlit pages so they can be built and tested without a
running server.
"""

import altair as alt
import numpy as np
import pandas as pd

from lib.artifacts import tile_cell
from lib.mesh import UnitCellMesh
from lib.optimizer import CONSTRAINT_NAMES


def history_frame(report: dict) -> pd.DataFrame:
    """One row per outer iteration: k, mass, cardinality and the five constraints."""
    records = report.get("history") or []
    if not records:
        return pd.DataFrame(columns=["k", "mass", "n_triangles", *CONSTRAINT_NAMES])
    df = pd.DataFrame.from_records(records)
    constraints = pd.DataFrame(df["constraints"].tolist(), columns=list(CONSTRAINT_NAMES))
    return pd.concat([df.drop(columns=["constraints"]), constraints], axis=1)


def normalized_constraints(report: dict) -> pd.DataFrame:
    """
    Long frame (k, constraint, value, normalized) with each constraint mapped
    onto its box: 0 at the lower bound, 1 at the upper bound.
    """
    df = history_frame(report)
    spec = report.get("spec", {})
    lower = np.asarray(spec.get("c_lower", [np.nan] * 5), dtype=float)
    upper = np.asarray(spec.get("c_upper", [np.nan] * 5), dtype=float)
    width = np.where(upper - lower > 0, upper - lower, 1.0)

    long = df.melt(
        id_vars=["k"], value_vars=list(CONSTRAINT_NAMES), var_name="constraint", value_name="value"
    )
    position = long["constraint"].map({name: i for i, name in enumerate(CONSTRAINT_NAMES)})
    long["normalized"] = (long["value"] - lower[position]) / width[position]
    return long


def mass_chart(history: pd.DataFrame) -> alt.Chart:
    return (
        alt.Chart(history)
        .mark_line(point=True)
        .encode(
            x=alt.X("k:Q", title="Outer iteration"),
            y=alt.Y("mass:Q", title="Mass", scale=alt.Scale(zero=False)),
            tooltip=[alt.Tooltip("k:Q"), alt.Tooltip("mass:Q", format=".5f")],
        )
        .properties(height=300)
    )


def constraints_chart(long: pd.DataFrame) -> alt.LayerChart:
    """Normalized constraints with the admissible band [0, 1] shaded."""
    band = (
        alt.Chart(pd.DataFrame({"lo": [0.0], "hi": [1.0]}))
        .mark_rect(opacity=0.15)
        .encode(y="lo:Q", y2="hi:Q")
    )
    lines = (
        alt.Chart(long)
        .mark_line(point=True)
        .encode(
            x=alt.X("k:Q", title="Outer iteration"),
            y=alt.Y("normalized:Q", title="Position in [lower, upper]"),
            color=alt.Color("constraint:N", title="Constraint", sort=list(CONSTRAINT_NAMES)),
            tooltip=[
                alt.Tooltip("k:Q"),
                alt.Tooltip("constraint:N"),
                alt.Tooltip("value:Q", format=".5f"),
            ],
        )
    )
    return (band + lines).properties(height=300)


def cardinality_chart(history: pd.DataFrame) -> alt.Chart:
    return (
        alt.Chart(history)
        .mark_bar()
        .encode(
            x=alt.X("k:O", title="Outer iteration"),
            y=alt.Y("n_triangles:Q", title="Triangles"),
            tooltip=[alt.Tooltip("k:O"), alt.Tooltip("n_triangles:Q")],
        )
        .properties(height=300)
    )


def density_points(mesh: UnitCellMesh, rho: np.ndarray, copies: int = 1) -> pd.DataFrame:
    """Element centroids with the element mean density, optionally tiled."""
    if copies > 1:
        points, triangles, values = tile_cell(mesh, rho, copies)
    else:
        points, triangles, values = mesh.vertices, mesh.triangles, np.asarray(rho, dtype=float)
    centroids = points[triangles].mean(axis=1)
    return pd.DataFrame(
        {"x": centroids[:, 0], "y": centroids[:, 1], "rho": values[triangles].mean(axis=1)}
    )


def density_chart(points: pd.DataFrame, size: int = 500) -> alt.Chart:
    extent = float(np.ceil(points[["x", "y"]].to_numpy().max())) if len(points) else 1.0
    return (
        alt.Chart(points)
        .mark_circle(opacity=0.9)
        .encode(
            x=alt.X("x:Q", scale=alt.Scale(domain=[0, extent]), title=None),
            y=alt.Y("y:Q", scale=alt.Scale(domain=[0, extent]), title=None),
            color=alt.Color("rho:Q", scale=alt.Scale(scheme="greys", domain=[0, 1]), title="rho"),
            tooltip=[alt.Tooltip("rho:Q", format=".3f")],
        )
        .properties(width=size, height=size)
    )
