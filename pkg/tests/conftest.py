"""Shared mesh fixtures."""

import numpy as np
import pytest

from edeqmap.mesh import EllipsoidRadii, TriMesh, validate_mesh, write_obj
from edeqmap.remesh import icosphere


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv("EDEQ_THREADS", "1")


@pytest.fixture
def tetrahedron() -> TriMesh:
    """Regular tetrahedron inscribed in the cube [-1, 1]³."""
    vertices = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return validate_mesh(vertices, faces)


@pytest.fixture
def icosahedron() -> TriMesh:
    return icosphere(0)


@pytest.fixture
def sphere_mesh() -> TriMesh:
    """Unit icosphere with 162 vertices."""
    return icosphere(2)


@pytest.fixture
def fine_sphere_mesh() -> TriMesh:
    """Unit icosphere with 642 vertices."""
    return icosphere(3)


@pytest.fixture
def elongated_mesh() -> TriMesh:
    """Bumpy surface stretched along z, far from area-preserving on any sphere."""
    sphere = icosphere(3)
    p = sphere.vertices
    bump = 1.0 + 0.25 * p[:, 0] * p[:, 1] + 0.15 * p[:, 2] ** 3
    vertices = p * bump[:, None] * np.array([1.0, 1.1, 1.8])
    return validate_mesh(vertices, sphere.faces)


@pytest.fixture
def small_elongated_mesh() -> TriMesh:
    """Coarser version of elongated_mesh for end-to-end command runs."""
    sphere = icosphere(2)
    p = sphere.vertices
    bump = 1.0 + 0.2 * p[:, 0] * p[:, 1]
    vertices = p * bump[:, None] * np.array([1.0, 1.0, 1.6])
    return validate_mesh(vertices, sphere.faces)


@pytest.fixture
def ellipsoid_radii() -> EllipsoidRadii:
    return EllipsoidRadii(1.0, 2.0, 4.0)


@pytest.fixture
def write_mesh_file(tmp_path):
    """Write a TriMesh to an OBJ file under tmp_path and return the path."""

    def write(mesh: TriMesh, name: str = "mesh.obj"):
        path = tmp_path / name
        write_obj(path, mesh.vertices, mesh.faces)
        return path

    return write
