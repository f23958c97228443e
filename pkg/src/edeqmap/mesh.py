"""
Closed triangle meshes and ellipsoidal domains.

Provides:
- EllipsoidRadii: the (a, b, c) triple of an axis-aligned ellipsoid and its
  rescaling map to and from the unit sphere
- TriMesh: immutable indexed face set with derived edges and incidence
- validate_mesh / load_mesh / write_obj: I/O and genus-0 validation
- face_areas, face_normals, face_to_vertex_matrix
- vertex_normals_ellipsoid, project_to_ellipsoid, fit_radii
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import meshio
import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .constants import DEGENERACY_FACTOR, MESH_FORMATS
from .errors import (
    DegenerateFaceError,
    ParseError,
    TopologyError,
    ValidationError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)


# =============================================================================
# Ellipsoid radii
# =============================================================================


@dataclass(frozen=True)
class EllipsoidRadii:
    """Radii of the ellipsoid x²/a² + y²/b² + z²/c² = 1."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        values = (self.a, self.b, self.c)
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise ValidationError(f"radii must be positive, got {values}")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def parse(cls, text) -> "EllipsoidRadii":
        """Parse "a,b,c", "sphere", or a 3-sequence."""
        if isinstance(text, EllipsoidRadii):
            return text
        if isinstance(text, str):
            if text.strip().lower() == "sphere":
                return cls(1.0, 1.0, 1.0)
            parts = [p for p in text.replace(" ", "").split(",") if p]
        else:
            parts = list(text)
        if len(parts) != 3:
            raise ValidationError(
                f'radii must be "a,b,c" or "sphere", got {text!r}'
            )
        try:
            return cls(*(float(p) for p in parts))
        except (TypeError, ValueError) as e:
            raise ValidationError(f"radii must be numeric, got {text!r}") from e

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)

    @property
    def max_radius(self) -> float:
        return max(self.a, self.b, self.c)

    @property
    def is_sphere(self) -> bool:
        return self.a == self.b == self.c == 1.0

    def to_sphere(self, positions: np.ndarray) -> np.ndarray:
        """The rescaling h(x, y, z) = (x/a, y/b, z/c)."""
        return np.asarray(positions, dtype=float) / self.as_array()

    def from_sphere(self, positions: np.ndarray) -> np.ndarray:
        """The inverse rescaling h⁻¹(x, y, z) = (a·x, b·y, c·z)."""
        return np.asarray(positions, dtype=float) * self.as_array()

    def residual(self, positions: np.ndarray) -> np.ndarray:
        """Per-point |x²/a² + y²/b² + z²/c² - 1|."""
        return np.abs(np.sum(self.to_sphere(positions) ** 2, axis=1) - 1.0)

    def __str__(self):
        return f"({self.a:g}, {self.b:g}, {self.c:g})"


# =============================================================================
# Triangle mesh
# =============================================================================


def _readonly(array: np.ndarray, dtype) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Indexed triangle mesh.

    Arrays are copied and made read-only at construction. Topology is not
    checked here; use validate_mesh() for meshes coming from outside.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        faces = np.asarray(self.faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValidationError(f"vertices must be (n, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValidationError(f"faces must be (m, 3), got {faces.shape}")
        object.__setattr__(self, "vertices", _readonly(vertices, float))
        object.__setattr__(self, "faces", _readonly(faces, np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) rows."""
        pairs = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return _readonly(np.unique(pairs, axis=0), np.int64)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @cached_property
    def vertex_face_incidence(self) -> sparse.csr_matrix:
        """|V|×|F| 0/1 matrix, entry (i, j) set when face j uses vertex i."""
        rows = self.faces.ravel()
        cols = np.repeat(np.arange(self.n_faces), 3)
        data = np.ones(len(rows))
        return sparse.csr_matrix(
            (data, (rows, cols)), shape=(self.n_vertices, self.n_faces)
        )

    @cached_property
    def vertex_adjacency(self) -> sparse.csr_matrix:
        """Symmetric |V|×|V| 0/1 matrix of mesh edges."""
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix(
            (data, (rows, cols)), shape=(self.n_vertices, self.n_vertices)
        )

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces)

    def same_connectivity(self, other: "TriMesh") -> bool:
        return self.n_vertices == other.n_vertices and np.array_equal(
            self.faces, other.faces
        )


# =============================================================================
# Geometry primitives
# =============================================================================


def as_3d(positions: np.ndarray) -> np.ndarray:
    """Promote planar (n, 2) or complex (n,) coordinates to (n, 3)."""
    positions = np.asarray(positions)
    if np.iscomplexobj(positions):
        return np.column_stack(
            [positions.real, positions.imag, np.zeros(len(positions))]
        )
    if positions.ndim == 2 and positions.shape[1] == 2:
        return np.column_stack([positions, np.zeros(len(positions))])
    return np.asarray(positions, dtype=float)


def face_cross(faces: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Per-face (p1 - p0) × (p2 - p0)."""
    p = as_3d(positions)
    return np.cross(p[faces[:, 1]] - p[faces[:, 0]], p[faces[:, 2]] - p[faces[:, 0]])


def face_areas(mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    """Per-face area by the cross-product formula."""
    positions = mesh.vertices if positions is None else positions
    return 0.5 * np.linalg.norm(face_cross(mesh.faces, positions), axis=1)


def face_normals(mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    positions = mesh.vertices if positions is None else positions
    cross = face_cross(mesh.faces, positions)
    norms = np.linalg.norm(cross, axis=1)
    if np.any(norms == 0):
        raise DegenerateFaceError(
            "zero-area face has no normal", faces=np.flatnonzero(norms == 0)
        )
    return cross / norms[:, None]


def face_centroids(mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    positions = mesh.vertices if positions is None else positions
    return np.asarray(positions)[mesh.faces].mean(axis=1)


def signed_volume(mesh: TriMesh, positions: np.ndarray | None = None) -> float:
    positions = mesh.vertices if positions is None else positions
    p = np.asarray(positions)
    f = mesh.faces
    return float(
        np.einsum("ij,ij->i", p[f[:, 0]], np.cross(p[f[:, 1]], p[f[:, 2]])).sum() / 6.0
    )


def bbox_diagonal(positions: np.ndarray) -> float:
    positions = np.asarray(positions)
    return float(np.linalg.norm(positions.max(axis=0) - positions.min(axis=0)))


def face_to_vertex_matrix(
    mesh: TriMesh, positions: np.ndarray | None = None
) -> sparse.csr_matrix:
    """
    Area-weighted face-to-vertex averaging matrix M (|V|×|F|).

    M[i, j] = Area(T_j) / Σ_{T ∋ i} Area(T) for faces T_j incident to vertex i.
    """
    areas = face_areas(mesh, positions)
    weighted = mesh.vertex_face_incidence @ sparse.diags(areas)
    totals = np.asarray(weighted.sum(axis=1)).ravel()
    if np.any(totals <= 0):
        bad = np.flatnonzero(totals <= 0)
        raise DegenerateFaceError(
            f"{len(bad)} vertices have zero incident area (first: {bad[0]})"
        )
    return sparse.csr_matrix(sparse.diags(1.0 / totals) @ weighted)


def vertex_normals_ellipsoid(
    positions: np.ndarray, radii: EllipsoidRadii
) -> np.ndarray:
    """Outward unit normals (x/a², y/b², z/c²)/‖·‖ of the ellipsoid."""
    positions = np.asarray(positions, dtype=float)
    gradient = positions / radii.as_array() ** 2
    norms = np.linalg.norm(gradient, axis=1)
    if np.any(norms == 0):
        raise ZeroVectorError(
            f"position at the origin has no ellipsoid normal "
            f"(vertex {int(np.flatnonzero(norms == 0)[0])})"
        )
    return gradient / norms[:, None]


def project_to_ellipsoid(positions: np.ndarray, radii: EllipsoidRadii) -> np.ndarray:
    """Radially scale each point onto the ellipsoid."""
    positions = np.asarray(positions, dtype=float)
    scale = np.sqrt(np.sum(radii.to_sphere(positions) ** 2, axis=1))
    if np.any(scale == 0):
        raise ZeroVectorError(
            f"cannot project the origin onto the ellipsoid "
            f"(vertex {int(np.flatnonzero(scale == 0)[0])})"
        )
    return positions / scale[:, None]


def normalize_rows(positions: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(positions, axis=1)
    if np.any(norms == 0):
        raise ZeroVectorError("cannot normalize a zero vector")
    return positions / norms[:, None]


def fit_radii(positions: np.ndarray) -> EllipsoidRadii:
    """
    Least-squares axis-aligned radii of points sitting on a centered ellipsoid.

    Solves for (1/a², 1/b², 1/c²), which is linear in the squared coordinates.
    """
    squared = np.asarray(positions, dtype=float) ** 2
    coeffs, *_ = np.linalg.lstsq(squared, np.ones(len(squared)), rcond=None)
    if np.any(coeffs <= 0):
        raise ValidationError(
            "positions do not lie on an axis-aligned ellipsoid centered at the origin"
        )
    return EllipsoidRadii(*(1.0 / np.sqrt(coeffs)))


# =============================================================================
# Validation
# =============================================================================


def _half_edges(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Directed edges (tail, head) in face order, 3 per face."""
    tails = faces.ravel()
    heads = faces[:, [1, 2, 0]].ravel()
    return tails, heads


def _edge_table(faces: np.ndarray):
    """Map every half-edge to its undirected edge id and count face uses."""
    tails, heads = _half_edges(faces)
    keys = np.column_stack([np.minimum(tails, heads), np.maximum(tails, heads)])
    unique, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    return unique, inverse.ravel(), counts, tails < heads


def _orient_faces(faces: np.ndarray) -> np.ndarray:
    """
    Make face orientation consistent by breadth-first traversal.

    Raises TopologyError if the surface is not orientable or not connected.
    """
    n_faces = len(faces)
    unique, inverse, counts, forward = _edge_table(faces)
    order = np.argsort(inverse, kind="stable")
    # every edge is used exactly twice at this point
    first, second = order[0::2], order[1::2]
    face_a, face_b = first // 3, second // 3
    consistent = forward[first] != forward[second]

    graph = sparse.coo_matrix(
        (np.ones(len(face_a)), (face_a, face_b)), shape=(n_faces, n_faces)
    ).tocsr()
    n_components, _ = csgraph.connected_components(graph, directed=False)
    if n_components != 1:
        raise TopologyError(
            f"mesh has {n_components} connected components; a single closed "
            "surface is required"
        )

    relation = {}
    for a, b, ok in zip(face_a.tolist(), face_b.tolist(), consistent.tolist()):
        relation[(a, b)] = ok
        relation[(b, a)] = ok

    visit, predecessors = csgraph.breadth_first_order(
        graph, 0, directed=False, return_predecessors=True
    )
    flip = np.zeros(n_faces, dtype=bool)
    for face in visit[1:]:
        parent = predecessors[face]
        flip[face] = flip[parent] ^ (not relation[(parent, face)])

    oriented = faces.copy()
    oriented[flip] = oriented[flip][:, ::-1]
    _, inverse, _, forward = _edge_table(oriented)
    order = np.argsort(inverse, kind="stable")
    if np.any(forward[order[0::2]] == forward[order[1::2]]):
        raise TopologyError("mesh is not orientable")
    if flip.any():
        logger.info(f"Flipped {int(flip.sum())} faces to make orientation consistent")
    return oriented


def validate_mesh(vertices: np.ndarray, faces: np.ndarray) -> TriMesh:
    """
    Validate a closed genus-0 triangle mesh and normalize its orientation.

    Unreferenced vertices are dropped. Faces end up counterclockwise when seen
    from outside (positive enclosed volume).
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3 or len(faces) == 0:
        raise ParseError("mesh must contain triangle faces")
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise ParseError("face references a vertex that does not exist")
    if not np.all(np.isfinite(vertices)):
        raise ParseError("vertex coordinates must be finite")

    used = np.unique(faces)
    if len(used) != len(vertices):
        logger.info(f"Dropping {len(vertices) - len(used)} unreferenced vertices")
        remap = np.full(len(vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        vertices = vertices[used]
        faces = remap[faces]

    if np.any(
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 2] == faces[:, 0])
    ):
        raise DegenerateFaceError("face repeats a vertex")

    unique, _, counts, _ = _edge_table(faces)
    if np.any(counts == 1):
        edge = unique[np.flatnonzero(counts == 1)[0]]
        raise TopologyError(
            f"boundary edge found ({edge[0]}, {edge[1]}); a closed surface is required"
        )
    if np.any(counts > 2):
        edge = unique[np.flatnonzero(counts > 2)[0]]
        raise TopologyError(f"non-manifold edge ({edge[0]}, {edge[1]})")

    faces = _orient_faces(faces)

    chi = len(vertices) - len(unique) + len(faces)
    if chi != 2:
        raise TopologyError(
            f"Euler characteristic is {chi}; a genus-0 surface (2) is required"
        )

    mesh = TriMesh(vertices, faces)
    areas = face_areas(mesh)
    floor = DEGENERACY_FACTOR * bbox_diagonal(vertices) ** 2
    degenerate = np.flatnonzero(areas < floor)
    if len(degenerate):
        raise DegenerateFaceError(
            f"{len(degenerate)} degenerate faces (first: {degenerate[0]}, "
            f"area {areas[degenerate[0]]:.3e})",
            faces=degenerate,
        )

    if signed_volume(mesh) < 0:
        mesh = TriMesh(vertices, faces[:, ::-1])
    return mesh


def load_mesh(path, format: str | None = None) -> TriMesh:
    """Read and validate an OBJ or OFF mesh."""
    path = Path(path)
    format = (format or path.suffix.lstrip(".")).lower()
    if format not in MESH_FORMATS:
        raise ParseError(f"unsupported mesh format {format!r}; use obj or off")
    if not path.is_file():
        raise ParseError(f"mesh file not found: {path}")

    try:
        data = meshio.read(str(path), file_format=format)
    except Exception as e:
        raise ParseError(f"could not parse {path}: {e}") from e

    triangles = []
    for block in data.cells:
        if block.type == "triangle":
            triangles.append(np.asarray(block.data))
        elif block.type not in ("vertex", "line"):
            raise ParseError(
                f"{path} contains {block.type} cells; only triangle meshes are supported"
            )
    if not triangles:
        raise ParseError(f"{path} contains no triangles")

    mesh = validate_mesh(np.asarray(data.points)[:, :3], np.concatenate(triangles))
    logger.debug(
        f"Loaded {path}: {mesh.n_vertices} vertices, {mesh.n_faces} faces"
    )
    return mesh


def write_obj(path, vertices: np.ndarray, faces: np.ndarray):
    """Write a triangle mesh as OBJ."""
    meshio.write(
        str(path),
        meshio.Mesh(np.asarray(vertices, dtype=float), [("triangle", np.asarray(faces))]),
        file_format="obj",
    )
