"""
Remeshing through an ellipsoidal parameterization.

Provides:
- icosphere: subdivided icosahedron on the unit sphere
- uniform_ellipsoid_mesh: near-uniform triangulation of an ellipsoid with a
  prescribed vertex count
- remesh_quality / RemeshReport: δ_size, δ_shape and per-face regularity
- pull_back: carry a mesh on the parameter ellipsoid back onto the surface
- parameterize / remesh_surface: the full pipeline for one backend
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import RunConfig
from .constants import (
    LOCATION_NEIGHBORS,
    LOCATION_TOLERANCE,
    MIN_TARGET_VERTICES,
    SMOOTHING_ITERATIONS,
    SMOOTHING_STEP,
)
from .conformal import UNIT_SPHERE, ParamMap, fecm, spherical_conformal_map
from .edem import run_edem
from .edeq import run_edeq
from .errors import LocationFailure, TargetTooSmall, ValidationError
from .mesh import (
    EllipsoidRadii,
    TriMesh,
    face_areas,
    normalize_rows,
    project_to_ellipsoid,
    vertex_normals_ellipsoid,
)
from .metrics import edge_lengths, face_regularity
from .quasiconformal import inverted_faces

logger = logging.getLogger(__name__)


# =============================================================================
# Quality measures
# =============================================================================


@dataclass
class RemeshReport:
    delta_size: float
    delta_shape: float
    regularity: np.ndarray
    n_vertices: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        summary = {
            "delta_size": self.delta_size,
            "delta_shape": self.delta_shape,
            "vertices": self.n_vertices,
            "faces": len(self.regularity),
        }
        summary.update(self.extra)
        return summary


def remesh_quality(mesh: TriMesh) -> RemeshReport:
    """δ_size = log(A_max / A_min), δ_shape = mean face regularity."""
    areas = face_areas(mesh)
    regularity = face_regularity(edge_lengths(mesh))
    return RemeshReport(
        delta_size=float(np.log(areas.max() / areas.min())),
        delta_shape=float(regularity.mean()),
        regularity=regularity,
        n_vertices=mesh.n_vertices,
    )


# =============================================================================
# Ellipsoid mesh generation
# =============================================================================


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return normalize_rows(vertices), faces


def icosphere(level: int) -> TriMesh:
    """Icosahedron with `level` rounds of 1-to-4 subdivision; 10·4^level + 2 vertices."""
    if level < 0:
        raise ValidationError(f"subdivision level must be nonnegative, got {level}")
    vertices, faces = _icosahedron()
    for _ in range(level):
        pairs = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        mid = len(vertices) + inverse.reshape(-1, 3)
        vertices = np.vstack(
            [vertices, normalize_rows(vertices[edges[:, 0]] + vertices[edges[:, 1]])]
        )
        a, b, c = faces.T
        ab, bc, ca = mid.T
        faces = np.vstack(
            [
                np.column_stack([a, ab, ca]),
                np.column_stack([b, bc, ab]),
                np.column_stack([c, ca, bc]),
                np.column_stack([ab, bc, ca]),
            ]
        )
    return TriMesh(vertices, faces)


def _icosphere_level(target: int) -> int:
    level = 0
    while 10 * 4 ** (level + 1) + 2 <= target:
        level += 1
    return level


def _edge_faces(faces: np.ndarray):
    """
    Undirected edges with their two incident half-edges.

    Returns (edges, halves) where halves[e] = [(face, corner), (face, corner)]
    and the half-edge at (face, corner) runs from corner to corner + 1.
    """
    pairs = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    halves = np.column_stack([order // 3, order % 3]).reshape(-1, 2, 2)
    return edges, halves


def _split_edges(vertices, faces, count, radii, rng):
    """Split the `count` longest edges, a face-disjoint batch per round."""
    while count > 0:
        edges, halves = _edge_faces(faces)
        lengths = np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
        order = np.lexsort((rng.random(len(edges)), -np.round(lengths, 12)))

        used = np.zeros(len(faces), dtype=bool)
        chosen = []
        for e in order:
            f1, f2 = halves[e, 0, 0], halves[e, 1, 0]
            if used[f1] or used[f2]:
                continue
            used[f1] = used[f2] = True
            chosen.append(e)
            if len(chosen) == count:
                break
        chosen = np.array(chosen)

        new_ids = len(vertices) + np.arange(len(chosen))
        midpoints = 0.5 * (vertices[edges[chosen, 0]] + vertices[edges[chosen, 1]])
        vertices = np.vstack([vertices, project_to_ellipsoid(midpoints, radii)])

        added = []
        faces = faces.copy()
        for side in (0, 1):
            f = halves[chosen, side, 0]
            c = halves[chosen, side, 1]
            i = faces[f, c]
            j = faces[f, (c + 1) % 3]
            k = faces[f, (c + 2) % 3]
            faces[f] = np.column_stack([i, new_ids, k])
            added.append(np.column_stack([new_ids, j, k]))
        faces = np.vstack([faces] + added)
        count -= len(chosen)
    return vertices, faces


def _opposite_angle(apex, p, q):
    u, v = p - apex, q - apex
    cross = np.linalg.norm(np.cross(u, v), axis=1)
    return np.arctan2(cross, np.einsum("ij,ij->i", u, v))


def _flip_edges(vertices, faces, radii) -> tuple[np.ndarray, int]:
    """One pass of non-conflicting Delaunay flips; returns new faces and flip count."""
    edges, halves = _edge_faces(faces)
    f1, c1 = halves[:, 0, 0], halves[:, 0, 1]
    f2, c2 = halves[:, 1, 0], halves[:, 1, 1]
    i = faces[f1, c1]
    j = faces[f1, (c1 + 1) % 3]
    apex1 = faces[f1, (c1 + 2) % 3]
    apex2 = faces[f2, (c2 + 2) % 3]
    angles = _opposite_angle(vertices[apex1], vertices[i], vertices[j]) + _opposite_angle(
        vertices[apex2], vertices[j], vertices[i]
    )
    candidates = np.flatnonzero(angles > np.pi + 1e-9)
    candidates = candidates[np.argsort(-angles[candidates], kind="stable")]

    existing = {tuple(e) for e in edges}
    degree = np.bincount(edges.ravel(), minlength=len(vertices))
    used = np.zeros(len(faces), dtype=bool)
    faces = faces.copy()
    flipped = 0
    for e in candidates:
        a, b = f1[e], f2[e]
        key = (min(apex1[e], apex2[e]), max(apex1[e], apex2[e]))
        if used[a] or used[b] or key in existing:
            continue
        # endpoints keep at least three neighbours
        if degree[i[e]] <= 3 or degree[j[e]] <= 3:
            continue
        new = np.array([[i[e], apex2[e], apex1[e]], [apex2[e], j[e], apex1[e]]])
        if inverted_faces(vertices, new, radii).any():
            continue
        faces[a], faces[b] = new
        used[a] = used[b] = True
        existing.add(key)
        degree[[i[e], j[e]]] -= 1
        degree[[apex1[e], apex2[e]]] += 1
        flipped += 1
    return faces, flipped


def _smooth(vertices, mesh: TriMesh, radii, step):
    """Tangential umbrella smoothing; moves that invert a face are undone."""
    adjacency = mesh.vertex_adjacency
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    umbrella = adjacency @ vertices / degree[:, None] - vertices
    normals = vertex_normals_ellipsoid(vertices, radii)
    umbrella -= np.einsum("ij,ij->i", umbrella, normals)[:, None] * normals
    moved = project_to_ellipsoid(vertices + step * umbrella, radii)

    bad = inverted_faces(moved, mesh.faces, radii)
    if bad.any():
        revert = np.unique(mesh.faces[bad])
        moved[revert] = vertices[revert]
        if inverted_faces(moved, mesh.faces, radii).any():
            return vertices
    return moved


def uniform_ellipsoid_mesh(
    radii: EllipsoidRadii, target_vertices: int, seed: int = 0
) -> TriMesh:
    """
    Near-uniform closed mesh on the ellipsoid with exactly `target_vertices` vertices.

    Start from the largest icosphere not exceeding the target, scale it onto
    the ellipsoid, split the longest edges until the count is reached, then
    alternate edge flips and tangential smoothing. Ties between equally long
    edges are broken by a generator seeded with `seed`.
    """
    if target_vertices < MIN_TARGET_VERTICES:
        raise TargetTooSmall(target_vertices, MIN_TARGET_VERTICES)
    rng = np.random.default_rng(seed)
    level = _icosphere_level(target_vertices)
    sphere = icosphere(level)
    vertices = radii.from_sphere(sphere.vertices)
    faces = np.array(sphere.faces)

    missing = target_vertices - len(vertices)
    if missing:
        vertices, faces = _split_edges(vertices, faces, missing, radii, rng)
    logger.debug(
        f"Ellipsoid mesh: icosphere level {level}, {missing} edge splits, "
        f"{len(vertices)} vertices"
    )

    for _ in range(SMOOTHING_ITERATIONS):
        faces, _flipped = _flip_edges(vertices, faces, radii)
        vertices = _smooth(vertices, TriMesh(vertices, faces), radii, SMOOTHING_STEP)
    faces, _flipped = _flip_edges(vertices, faces, radii)
    return TriMesh(vertices, faces)


# =============================================================================
# Pull-back
# =============================================================================


def _central_barycentric(points, corners):
    """
    Barycentric coordinates of the rays through `points` on the triangles.

    points (..., 3), corners (..., 3, 3). The weights are normalized to sum to
    one; a nonpositive raw sum means the ray meets the triangle's plane behind
    the origin.
    """
    a, b, c = corners[..., 0, :], corners[..., 1, :], corners[..., 2, :]
    raw = np.stack(
        [
            np.einsum("...i,...i->...", points, np.cross(b, c)),
            np.einsum("...i,...i->...", points, np.cross(c, a)),
            np.einsum("...i,...i->...", points, np.cross(a, b)),
        ],
        axis=-1,
    )
    total = raw.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = raw / total[..., None]
    residual = np.where(total > 0, np.maximum(0.0, -weights.min(axis=-1)), np.inf)
    return np.nan_to_num(weights), residual


def _locate(points, corners, candidates):
    """Best face among `candidates` (n, k) for each point."""
    weights, residual = _central_barycentric(points[:, None, :], corners[candidates])
    best = np.argmin(residual, axis=1)
    rows = np.arange(len(points))
    return candidates[rows, best], weights[rows, best], residual[rows, best]


def pull_back(param: ParamMap, samples: TriMesh) -> TriMesh:
    """
    Map a mesh on the parameter ellipsoid back onto the source surface.

    Each sample vertex is located in a face of the parameterization (KD-tree
    over face centroids on the unit sphere, then barycentric test, smallest
    residual wins) and placed at the barycentric combination of that face's
    source vertices. The samples' connectivity is kept.
    """
    sphere = normalize_rows(param.radii.to_sphere(param.positions))
    points = normalize_rows(param.radii.to_sphere(samples.vertices))
    corners = sphere[param.faces]
    tree = cKDTree(normalize_rows(corners.mean(axis=1)))

    n_faces = len(corners)
    located = np.full(len(points), -1)
    weights = np.zeros((len(points), 3))
    residual = np.full(len(points), np.inf)

    pending = np.arange(len(points))
    k = min(LOCATION_NEIGHBORS, n_faces)
    while len(pending):
        _, candidates = tree.query(points[pending], k=k)
        candidates = np.asarray(candidates).reshape(len(pending), -1)
        face, w, r = _locate(points[pending], corners, candidates)
        located[pending], weights[pending], residual[pending] = face, w, r
        pending = pending[r > LOCATION_TOLERANCE]
        if k == n_faces:
            break
        k = min(2 * k, n_faces)

    if len(pending):
        worst = pending[np.argmax(residual[pending])]
        raise LocationFailure(int(worst), float(residual[worst]))

    source = param.source.vertices[param.faces[located]]
    vertices = np.einsum("ij,ijk->ik", weights, source)
    logger.debug(
        f"Pulled back {len(points)} samples, max residual {residual.max():.2e}"
    )
    return TriMesh(vertices, samples.faces)


# =============================================================================
# Pipeline
# =============================================================================


@dataclass
class Parameterization:
    """A backend's map together with its run result (None for closed-form maps)."""

    method: str
    param: ParamMap
    result: object = None


def parameterize(
    mesh: TriMesh, method: str, config: RunConfig, population=None
) -> Parameterization:
    """
    Run one parameterization backend.

    scm   spherical conformal map
    sdem  EDEM on the unit sphere, started from scm
    fecm  ellipsoidal conformal map
    edem  EDEM on the configured ellipsoid
    edeq  EDEQ from the configured radii
    """
    population = config.population if population is None else population
    radii = config.radii_value()
    if method == "scm":
        return Parameterization(method, spherical_conformal_map(mesh))
    if method == "sdem":
        edem_config = config.edem_config()
        edem_config.radii = UNIT_SPHERE
        result = run_edem(
            mesh, edem_config, population, initial=spherical_conformal_map(mesh)
        )
        return Parameterization(method, result.param, result)
    if method == "fecm":
        return Parameterization(method, fecm(mesh, radii))
    if method == "edem":
        result = run_edem(mesh, config.edem_config(), population)
        return Parameterization(method, result.param, result)
    if method == "edeq":
        result = run_edeq(mesh, config.edeq_config(), population)
        return Parameterization(method, result.param, result)
    raise ValidationError(f"unknown parameterization method {method!r}")


def remesh_surface(
    param: ParamMap, target_vertices: int, seed: int = 0
) -> tuple[TriMesh, RemeshReport]:
    """Uniform ellipsoid mesh pulled back onto the surface, with its quality."""
    samples = uniform_ellipsoid_mesh(param.radii, target_vertices, seed)
    remeshed = pull_back(param, samples)
    report = remesh_quality(remeshed)
    logger.info(
        f"Remeshed to {remeshed.n_vertices} vertices: "
        f"delta_size {report.delta_size:.4f}, delta_shape {report.delta_shape:.4f}"
    )
    return remeshed, report
