"""
Tests for dashboard frames and charts.

These tests verify that the dashboard pages render without errors by:
1. Building the frames the pages build from a report dict
2. Converting every chart to a Vega-Lite dict, which is where Altair
   encoding errors and type mismatches surface

Run with: make test
"""

import numpy as np
import pandas as pd
import pytest

from lib import charts
from lib.optimizer import CONSTRAINT_NAMES

LOWER = [0.05, 0.055, 1.0, 0.01, 0.0]
UPPER = [0.08, 0.08, 2.0, 1.0, 0.58]


# Mock data that matches the structure of report.json
@pytest.fixture
def mock_report():
    return {
        "name": "design1",
        "spec": {"c_lower": LOWER, "c_upper": UPPER},
        "history": [
            {"k": 0, "mass": 0.55, "n_triangles": 1800, "constraints": LOWER},
            {"k": 1, "mass": 0.41, "n_triangles": 2400, "constraints": UPPER},
            {"k": 2, "mass": 0.35, "n_triangles": 2420, "constraints": [0.07, 0.06, 1.5, 0.5, 0.3]},
        ],
    }


class TestFrames:
    """Tests for the frames behind the Design History page."""

    def test_history_frame_columns(self, mock_report):
        """Test one row per outer iteration with a column per constraint."""
        df = charts.history_frame(mock_report)
        assert len(df) == 3
        assert list(CONSTRAINT_NAMES) == [c for c in df.columns if c in CONSTRAINT_NAMES]
        assert df["E1111"].tolist() == [0.05, 0.08, 0.07]

    def test_empty_history(self):
        """Test that an aborted run without history gives an empty frame."""
        df = charts.history_frame({"history": []})
        assert df.empty
        assert "mass" in df.columns

    def test_normalized_bounds(self, mock_report):
        """Test that lower bounds map to 0 and upper bounds to 1."""
        long = charts.normalized_constraints(mock_report)
        assert len(long) == 3 * len(CONSTRAINT_NAMES)
        assert np.allclose(long.loc[long["k"] == 0, "normalized"], 0.0)
        assert np.allclose(long.loc[long["k"] == 1, "normalized"], 1.0)


class TestCharts:
    """Tests for the Altair charts."""

    def test_mass_chart(self, mock_report):
        """Test that the mass chart renders without errors."""
        chart = charts.mass_chart(charts.history_frame(mock_report)).to_dict()
        assert "encoding" in chart
        assert chart["mark"]["type"] == "line"

    def test_constraints_chart(self, mock_report):
        """Test that the layered constraints chart renders without errors."""
        chart = charts.constraints_chart(charts.normalized_constraints(mock_report)).to_dict()
        marks = [layer["mark"]["type"] for layer in chart["layer"]]
        assert marks == ["rect", "line"]

    def test_cardinality_chart(self, mock_report):
        """Test that the cardinality chart renders without errors."""
        chart = charts.cardinality_chart(charts.history_frame(mock_report)).to_dict()
        assert chart["mark"]["type"] == "bar"


class TestUnitCell:
    """Tests for the Unit Cell page."""

    def test_density_points(self, mesh4):
        """Test one point per element at its centroid."""
        points = charts.density_points(mesh4, np.ones(mesh4.n_vertices))
        assert len(points) == mesh4.n_triangles
        assert points["rho"].eq(1.0).all()
        assert points[["x", "y"]].to_numpy().min() > 0

    def test_tiled_points(self, mesh4):
        """Test that a 3 x 3 tiling has nine times the elements and spans [0, 3]."""
        points = charts.density_points(mesh4, np.ones(mesh4.n_vertices), copies=3)
        assert len(points) == 9 * mesh4.n_triangles
        assert points["x"].max() < 3.0

    def test_density_chart(self, mesh4):
        """Test that the density chart renders without errors."""
        chart = charts.density_chart(charts.density_points(mesh4, np.ones(mesh4.n_vertices))).to_dict()
        assert chart["mark"]["type"] == "circle"

    def test_empty_density_chart(self):
        """Test that an empty frame still renders."""
        chart = charts.density_chart(pd.DataFrame({"x": [], "y": [], "rho": []})).to_dict()
        assert chart["mark"]["type"] == "circle"
