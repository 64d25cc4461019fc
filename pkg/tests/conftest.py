"""
Shared fixtures for the test suite.

Meshes are kept small so the default run stays fast; desk-scale runs are
marked slow and deselected by default.
"""

import numpy as np
import pytest

from lib.config import DesignSpec
from lib.fem import MaterialLaw
from lib.mesh import build_structured_mesh


@pytest.fixture
def mesh4():
    return build_structured_mesh(4)


@pytest.fixture
def mesh8():
    return build_structured_mesh(8)


@pytest.fixture
def law():
    return MaterialLaw()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def periodic_density(mesh8, rng):
    """Random periodic nodal density in [0.3, 1] on the 8 x 8 mesh."""
    return mesh8.expand(rng.uniform(0.3, 1.0, size=mesh8.n_masters))


@pytest.fixture
def tiny_spec():
    """Design case 1 bounds on a tiny mesh with very short optimizer runs."""
    return DesignSpec(
        name="tiny",
        n=6,
        baseline_n=6,
        kmax=1,
        it_first=3,
        it_rest=2,
        it_baseline=3,
        max_elements=300,
        aspect_ratio_max=10.0,
        h_min=0.02,
        h_iso=0.2,
        tau=0.05,
        verify_h=0.05,
    )
