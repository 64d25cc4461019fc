"""
Final unit cell: density map, optional 3x3 tiling, homogenized tensors and moduli.
"""

import pandas as pd
import streamlit as st

from data import list_runs, load_cell, load_verification
from lib import charts

st.title("Unit Cell")

runs = list_runs()
if not runs:
    st.warning("No runs found. Run `make run CONFIG=design1` to produce one.")
    st.stop()

run = st.selectbox("Run", runs)

try:
    stored = load_cell(run)
except Exception as e:
    st.error(f"Could not load the cell of {run}: {e}")
    st.stop()

tiled = st.checkbox("Show 3x3 tiling", value=False)
points = charts.density_points(stored.mesh, stored.rho, copies=3 if tiled else 1)
st.altair_chart(charts.density_chart(points), use_container_width=False)
st.caption(f"{stored.mesh.n_triangles} triangles, {stored.mesh.n_vertices} vertices")

final = stored.report.get("final")
if not final:
    st.info("This run did not finish; no homogenized tensors available.")
    st.stop()

tensor_col, moduli_col = st.columns(2)
with tensor_col:
    st.subheader("Elastic tensor")
    st.dataframe(pd.DataFrame(final["tensors"]["E"]), use_container_width=True)
    st.subheader("Conductivity tensor")
    st.dataframe(pd.DataFrame(final["tensors"]["k"]), use_container_width=True)

with moduli_col:
    st.subheader("Engineering moduli")
    moduli = pd.DataFrame({"optimized": final["moduli"]})
    verification = load_verification(run)
    if verification:
        moduli["verified"] = pd.Series(verification["moduli"])
    st.dataframe(moduli, use_container_width=True)

    st.subheader("Constraints")
    st.dataframe(pd.DataFrame(final["constraints"]).T, use_container_width=True)
