"""
Cell Design Dashboard - Summary

One block per finished run: final mass, termination, mesh size and
constraint satisfaction.

Run with: make app
"""

import streamlit as st

from data import list_runs, load_report, runs_root

st.title("Summary")

st.markdown("Use the sidebar to navigate between pages.")

runs = list_runs()
if not runs:
    st.warning(
        f"No runs found under `{runs_root()}`. "
        "Run `make run CONFIG=design1` to produce one."
    )
    st.stop()

st.subheader("Runs")

for run in runs:
    st.markdown(f"#### {run}")
    try:
        report = load_report(run)
    except Exception as e:
        st.warning(f"Could not load report for {run}: {e}")
        st.divider()
        continue

    final = report.get("final")
    col1, col2, col3, col4 = st.columns(4)
    col1.metric("Final Mass", f"{final['mass']:.4f}" if final else "N/A")
    col2.metric("Termination", report.get("termination", "N/A"))
    col3.metric("Iterations", report.get("iterations", 0))
    col4.metric("Triangles", report.get("n_triangles", 0))

    if final:
        entries = final["constraints"]
        inside = sum(
            entry["lower"] <= entry["value"] <= entry["upper"] for entry in entries.values()
        )
        st.caption(
            f"{report.get('mode', 'adaptive').capitalize()} run, seed {report.get('seed')}: "
            f"{inside} of {len(entries)} constraints inside their bounds"
        )
    if report.get("error"):
        st.error(report["error"])

    st.divider()
