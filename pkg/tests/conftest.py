from pathlib import Path

import numpy as np
import pytest

from shapecorr.mesh import Mesh, normalize_unit_sphere
from shapecorr.oracle import ShapeTruth, SyntheticOracle, SyntheticTruth
from shapecorr.shapes import bumpy_sphere, icosphere, quadrant_face_labels

DATA_DIR = Path(__file__).parent / "data"

QUAD_REGIONS = ("front", "left", "back", "right")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def triangle_mesh() -> Mesh:
    """Single equilateral triangle with unit edge length, in the z=0 plane."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, np.sqrt(3) / 2, 0.0]])
    return Mesh(verts, [[0, 1, 2]], id="tri")


@pytest.fixture(scope="session")
def sphere2() -> Mesh:
    return normalize_unit_sphere(icosphere(2, id="sphere2"))


@pytest.fixture(scope="session")
def blob_pair():
    """Two labeled blob meshes plus the synthetic truth covering them."""
    mesh1 = normalize_unit_sphere(bumpy_sphere(2, id="blob_a"))
    mesh2 = normalize_unit_sphere(bumpy_sphere(2, amplitude=0.2, id="blob_b"))
    labels1 = quadrant_face_labels(mesh1, QUAD_REGIONS)
    labels2 = quadrant_face_labels(mesh2, QUAD_REGIONS)
    index = {n: i for i, n in enumerate(QUAD_REGIONS)}
    truth = SyntheticTruth(
        shapes={
            "blob_a": ShapeTruth("apple", QUAD_REGIONS, np.array([index[l] for l in labels1])),
            "blob_b": ShapeTruth("pear", QUAD_REGIONS, np.array([index[l] for l in labels2])),
        },
        mappings={("apple", "pear"): tuple((n, n) for n in QUAD_REGIONS)},
    )
    return mesh1, mesh2, truth


@pytest.fixture
def blob_oracle(blob_pair) -> SyntheticOracle:
    return SyntheticOracle(blob_pair[2])
