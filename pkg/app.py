"""
Cell Design Dashboard - Main Entry Point

Read-only multi-page Streamlit viewer for finished design runs.

Set CELLDESIGN_RUNS_DIR to the directory holding run outputs (default: runs).

Run with: make app
"""

import streamlit as st
from dotenv import load_dotenv

load_dotenv()

SUMMARY_PAGE = st.Page("Summary.py", title="Summary", default=True)

RUN_PAGES = [
    st.Page("pages/1_Design_History.py", title="Design History", icon=":material/timeline:"),
    st.Page("pages/2_Unit_Cell.py", title="Unit Cell", icon=":material/grid_on:"),
]

nav_config = {
    "Overview": [SUMMARY_PAGE],
    "Runs": RUN_PAGES,
}

st.set_page_config(
    page_title="Cell Design Dashboard",
    page_icon=":material/hexagon:",
    layout="wide",
)

pg = st.navigation(nav_config)
pg.run()
