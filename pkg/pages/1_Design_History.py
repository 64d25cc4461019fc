"""
Design history: mass, constraints and mesh cardinality over the outer iterations.
"""

import streamlit as st

from data import list_runs, load_history, load_report
from lib import charts

st.title("Design History")

st.caption(
    "Evolution of the mass, of the constraints normalized to their bounds "
    "(0 = lower bound, 1 = upper bound) and of the mesh cardinality."
)

runs = list_runs()
if not runs:
    st.warning("No runs found. Run `make run CONFIG=design1` to produce one.")
    st.stop()

run = st.selectbox("Run", runs)

try:
    report = load_report(run)
except Exception as e:
    st.error(f"Could not load report: {e}")
    st.stop()

history = charts.history_frame(report)
if history.empty:
    st.info("This run has no recorded iterations.")
    st.stop()

mass_col, card_col = st.columns(2)
with mass_col:
    st.header("Mass")
    st.altair_chart(charts.mass_chart(history), use_container_width=True)
with card_col:
    st.header("Mesh Cardinality")
    st.altair_chart(charts.cardinality_chart(history), use_container_width=True)

st.header("Constraints")
st.altair_chart(
    charts.constraints_chart(charts.normalized_constraints(report)), use_container_width=True
)

with st.expander("Optimizer iterations", expanded=False):
    log = load_history(run)
    if log.empty:
        st.info("No optimizer log recorded.")
    else:
        st.dataframe(log, use_container_width=True, hide_index=True)

st.header("Raw Data")
st.dataframe(history, use_container_width=True, hide_index=True)
