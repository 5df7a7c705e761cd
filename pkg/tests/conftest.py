import numpy as np
import pytest

from biotfem.assembly import FormOperators
from biotfem.meshing import structured_mesh

# acceptance parameter grid, shared by several suites
LAM_GRID = [1.0, 1e2, 1e4, 1e8]
RP_GRID = [1e-8, 1e-4, 1.0, 1e4, 1e8]
AP_GRID = [0.0, 1.0]


@pytest.fixture(scope="session")
def ops_bdm():
    """Stable-triple operators on the acceptance meshes, built once."""
    return {n: FormOperators(structured_mesh(n), ("bdm1", "rt0", "p0"))
            for n in (2, 4, 8)}


@pytest.fixture(scope="session")
def ops_p1c():
    """Unstable-triple operators for the negative experiments."""
    return {n: FormOperators(structured_mesh(n), ("p1cvec", "rt0", "p0"))
            for n in (2, 4)}


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
