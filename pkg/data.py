"""
Shared data loading functions for Streamlit app.

This module provides cached loaders for the run directories found under
CELLDESIGN_RUNS_DIR that can be shared across all pages.
"""

import json
from pathlib import Path

import pandas as pd
import streamlit as st
from dotenv import load_dotenv

from lib import artifacts
from lib.config import runs_dir

load_dotenv()


def runs_root() -> Path:
    return Path(runs_dir())


@st.cache_data(ttl=60)  # Cache for 1 minute
def list_runs() -> list[str]:
    """Run directories (relative to the runs root) that hold a report."""
    root = runs_root()
    if not root.exists():
        return []
    return sorted(
        str(path.parent.relative_to(root)) for path in root.rglob(artifacts.REPORT_JSON)
    )


@st.cache_data(ttl=60)
def load_report(run: str) -> dict:
    """Load report.json of a run."""
    return json.loads((runs_root() / run / artifacts.REPORT_JSON).read_text())


@st.cache_data(ttl=60)
def load_history(run: str) -> pd.DataFrame:
    """Load the optimizer iteration log of a run."""
    return artifacts.read_history(runs_root() / run / artifacts.HISTORY_JSONL)


@st.cache_data(ttl=60)
def load_verification(run: str) -> dict | None:
    """Load verification.json of a run, if the verify script was run."""
    path = runs_root() / run / artifacts.VERIFICATION_JSON
    return json.loads(path.read_text()) if path.exists() else None


@st.cache_resource
def load_cell(run: str) -> artifacts.StoredRun:
    """Load mesh, density and report of a run."""
    return artifacts.load_run(runs_root() / run)
