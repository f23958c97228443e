"""
Quasi-conformal machinery.

Provides:
- PlanarMap: a piecewise-linear map between two planar embeddings of one mesh
- affine_derivatives / beltrami_of_planar_map / beltrami_of_surface_map
- flatten_faces: rigid per-face flattening of surface triangles
- lbs_reconstruct: the Linear Beltrami Solver
- compose_beltrami: Beltrami coefficient of a composition g∘f
- truncate_beltrami: clamp |μ| on selected faces
- inverted_faces / count_flipped_faces: orientation checks on spheres and ellipsoids
- overlap_correction_sphere / overlap_correction_ellipsoid: fold-over repair

Planar coordinates are complex arrays throughout.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .constants import (
    BELTRAMI_BOUND,
    CONFORMAL_FACTOR_FLOOR,
    CORRECTION_ROUNDS,
    DENOMINATOR_FLOOR,
    MU_TRUNCATION,
    POLE_TOLERANCE,
)
from .errors import (
    BeltramiOutOfRange,
    ConformalFactorZero,
    CorrectionFailed,
    DegenerateFaceError,
    DenominatorNearZero,
    ValidationError,
)
from .mesh import EllipsoidRadii, normalize_rows, project_to_ellipsoid
from .operators import solve_spd

logger = logging.getLogger(__name__)


def as_complex(points: np.ndarray) -> np.ndarray:
    """Accept complex (n,) or real (n, 2) planar coordinates."""
    points = np.asarray(points)
    if np.iscomplexobj(points):
        return points.astype(complex)
    if points.ndim == 2 and points.shape[1] >= 2:
        return points[:, 0] + 1j * points[:, 1]
    raise ValidationError(f"planar points must be complex or (n, 2), got {points.shape}")


@dataclass(frozen=True)
class PlanarMap:
    """Piecewise-linear map sending `source` vertex coordinates to `target`."""

    faces: np.ndarray
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        source = as_complex(self.source)
        target = as_complex(self.target)
        if source.shape != target.shape:
            raise ValidationError(
                f"source and target sizes differ: {source.shape} vs {target.shape}"
            )
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64))
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)

    def face_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        return self.source[self.faces], self.target[self.faces]


# =============================================================================
# Beltrami coefficients
# =============================================================================


def affine_derivatives(
    source: np.ndarray, target: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    f_z and f_z̄ of the affine map sending each source triangle to its target.

    `source` and `target` are (F, 3) complex corner coordinates. The result
    does not depend on the orientation of the source triangles.
    """
    a = source[:, 1] - source[:, 0]
    b = source[:, 2] - source[:, 0]
    A = target[:, 1] - target[:, 0]
    B = target[:, 2] - target[:, 0]
    det = a * np.conj(b) - b * np.conj(a)
    if np.any(np.abs(det) == 0):
        raise DegenerateFaceError(
            "degenerate source triangle", faces=np.flatnonzero(np.abs(det) == 0)
        )
    f_z = (A * np.conj(b) - B * np.conj(a)) / det
    f_zbar = (a * B - b * A) / det
    return f_z, f_zbar


def beltrami_from_derivatives(
    f_z: np.ndarray, f_zbar: np.ndarray, strict: bool = True
) -> np.ndarray:
    """μ = f_z̄ / f_z; faces with vanishing f_z raise, or get μ = 0 if not strict."""
    small = np.abs(f_z) < CONFORMAL_FACTOR_FLOOR
    if small.any():
        if strict:
            raise ConformalFactorZero(
                f"f_z vanishes on {int(small.sum())} faces "
                f"(first: {int(np.flatnonzero(small)[0])})"
            )
        logger.debug(f"Zeroing Beltrami coefficient on {int(small.sum())} collapsed faces")
    safe = np.where(small, 1.0, f_z)
    return np.where(small, 0.0, f_zbar / safe)


def beltrami_of_planar_map(planar_map: PlanarMap, strict: bool = True) -> np.ndarray:
    """Per-face Beltrami coefficient of a piecewise-linear planar map."""
    source, target = planar_map.face_coordinates()
    f_z, f_zbar = affine_derivatives(source, target)
    return beltrami_from_derivatives(f_z, f_zbar, strict=strict)


def flatten_faces(
    faces: np.ndarray, positions: np.ndarray, orientation=1.0
) -> np.ndarray:
    """
    Rigidly flatten each surface triangle into the complex plane.

    p0 → 0, p1 → |e1|, p2 on the side given by `orientation` (+1 keeps the
    triangle counterclockwise, -1 clockwise; scalar or per face).
    """
    p = np.asarray(positions, dtype=float)
    e1 = p[faces[:, 1]] - p[faces[:, 0]]
    e2 = p[faces[:, 2]] - p[faces[:, 0]]
    length = np.linalg.norm(e1, axis=1)
    if np.any(length == 0):
        raise DegenerateFaceError(
            "zero-length edge while flattening", faces=np.flatnonzero(length == 0)
        )
    along = np.einsum("ij,ij->i", e1, e2) / length
    across = np.linalg.norm(np.cross(e1, e2), axis=1) / length
    sign = np.broadcast_to(np.where(np.asarray(orientation) < 0, -1.0, 1.0), along.shape)
    local = np.zeros((len(faces), 3), dtype=complex)
    local[:, 1] = length
    local[:, 2] = along + 1j * sign * across
    return local


def beltrami_of_surface_map(
    faces: np.ndarray,
    source_positions: np.ndarray,
    target_positions: np.ndarray,
    strict: bool = True,
) -> np.ndarray:
    """
    Per-face Beltrami coefficient of a map between two surface embeddings.

    Both triangles of each pair are rigidly flattened, so the result is
    invariant under rigid motions of either side.
    """
    faces = np.asarray(faces)
    f_z, f_zbar = affine_derivatives(
        flatten_faces(faces, source_positions), flatten_faces(faces, target_positions)
    )
    return beltrami_from_derivatives(f_z, f_zbar, strict=strict)


def planar_orientation(faces: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Twice the signed area of each planar triangle."""
    z = as_complex(points)[faces]
    return np.imag(np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0]))


def global_orientation(faces: np.ndarray, points: np.ndarray) -> float:
    """+1 if the planar mesh is mostly counterclockwise, else -1."""
    return 1.0 if planar_orientation(faces, points).sum() >= 0 else -1.0


def beltrami_of_plane_to_surface(
    faces: np.ndarray,
    plane_points: np.ndarray,
    surface_positions: np.ndarray,
    strict: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """
    μ and f_z of the map from a planar embedding onto a surface.

    Surface triangles are flattened with the planar mesh's global orientation
    so orientation-preserving faces give |μ| < 1.
    """
    faces = np.asarray(faces)
    source = as_complex(plane_points)[faces]
    orientation = global_orientation(faces, plane_points)
    target = flatten_faces(faces, surface_positions, orientation)
    f_z, f_zbar = affine_derivatives(source, target)
    return beltrami_from_derivatives(f_z, f_zbar, strict=strict), f_z


def truncate_beltrami(
    mu: np.ndarray, mask: np.ndarray | None = None, bound: float = MU_TRUNCATION
) -> np.ndarray:
    """μ ← μ·min(1, bound/|μ|) on masked faces (all faces when mask is None)."""
    mu = np.asarray(mu, dtype=complex).copy()
    magnitude = np.abs(mu)
    chop = magnitude > bound
    if mask is not None:
        chop &= np.asarray(mask, dtype=bool)
    mu[chop] *= bound / magnitude[chop]
    return mu


# =============================================================================
# Linear Beltrami Solver
# =============================================================================


def _beltrami_energy_matrix(
    faces: np.ndarray, source: np.ndarray, mu: np.ndarray, n_vertices: int
) -> sparse.csr_matrix:
    """
    Hermitian matrix H of E(f) = Σ_T w_T |f_z̄ − μ_T f_z|², w_T = |T| / (1 − |μ_T|²).

    On each face f_z = Σ c_i f_i and f_z̄ = Σ d_i f_i, with d_i = ∇φ_i / 2
    and c_i its conjugate, so the residual is complex linear in f.
    """
    z = source[faces]
    signed_area = 0.5 * np.imag(np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0]))
    if np.any(signed_area == 0):
        raise DegenerateFaceError(
            "degenerate source triangle in Beltrami solver",
            faces=np.flatnonzero(signed_area == 0),
        )
    # gradients of the hat functions as complex numbers
    opposite = np.stack([z[:, 2] - z[:, 1], z[:, 0] - z[:, 2], z[:, 1] - z[:, 0]], axis=1)
    gradient = 1j * opposite / (2.0 * signed_area[:, None])
    residual = 0.5 * gradient - mu[:, None] * 0.5 * np.conj(gradient)
    weight = np.abs(signed_area) / (1.0 - np.abs(mu) ** 2)

    rows, cols, values = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(faces[:, i])
            cols.append(faces[:, j])
            values.append(weight * np.conj(residual[:, i]) * residual[:, j])
    return sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_vertices, n_vertices),
    ).tocsr()


def lbs_reconstruct(
    faces: np.ndarray,
    source: np.ndarray,
    mu: np.ndarray,
    constrained: np.ndarray,
    targets: np.ndarray,
) -> np.ndarray:
    """
    Reconstruct the planar map with Beltrami coefficient `mu`.

    Vertices in `constrained` are pinned to `targets`; the rest minimize the
    Beltrami energy Σ w_T |f_z̄ − μ f_z|², so any map whose coefficient is
    exactly `mu` and that meets the pins comes back unchanged. Only faces
    touching a free vertex enter the solve, so |μ| is checked there.
    """
    faces = np.asarray(faces, dtype=np.int64)
    source = as_complex(source)
    mu = np.asarray(mu, dtype=complex)
    constrained = np.asarray(constrained, dtype=np.int64)
    targets = as_complex(np.asarray(targets))
    n = len(source)
    if len(np.unique(constrained)) < 2:
        raise ValidationError("at least 2 constrained vertices are required")

    free_mask = np.ones(n, dtype=bool)
    free_mask[constrained] = False
    active = free_mask[faces].any(axis=1)
    out_of_range = active & (np.abs(mu) >= BELTRAMI_BOUND)
    if out_of_range.any():
        raise BeltramiOutOfRange(
            f"|mu| >= {BELTRAMI_BOUND} on {int(out_of_range.sum())} faces "
            f"(max {np.abs(mu[out_of_range]).max():.6f})"
        )

    result = np.zeros(n, dtype=complex)
    result[constrained] = targets
    free = np.flatnonzero(free_mask)
    if len(free) == 0:
        return result

    H = _beltrami_energy_matrix(faces[active], source, mu[active], n)
    H_ff = H[free][:, free]
    rhs = -(H[free][:, constrained] @ targets)
    # H = P + iQ acting on x + iy is the real symmetric system [[P, -Q], [Q, P]]
    P, Q = H_ff.real, H_ff.imag
    system = sparse.bmat([[P, -Q], [Q, P]], format="csc")
    solution = solve_spd(system, np.concatenate([rhs.real, rhs.imag]))
    result[free] = solution[: len(free)] + 1j * solution[len(free):]
    return result


def compose_beltrami(
    mu_f: np.ndarray, f: PlanarMap, mu_g_on_image: np.ndarray
) -> np.ndarray:
    """
    Beltrami coefficient of g∘f.

    μ = (μ_f + μ_g τ) / (1 + conj(μ_f) μ_g τ), τ = conj(f_z)/f_z.
    """
    source, target = f.face_coordinates()
    f_z, _ = affine_derivatives(source, target)
    return compose_with_derivative(mu_f, f_z, mu_g_on_image)


def compose_with_derivative(
    mu_f: np.ndarray, f_z: np.ndarray, mu_g: np.ndarray
) -> np.ndarray:
    if np.any(np.abs(f_z) < CONFORMAL_FACTOR_FLOOR):
        raise ConformalFactorZero("f_z vanishes in Beltrami composition")
    tau = np.conj(f_z) / f_z
    numerator = mu_f + mu_g * tau
    denominator = 1.0 + np.conj(mu_f) * mu_g * tau
    if np.any(np.abs(denominator) < DENOMINATOR_FLOOR):
        raise DenominatorNearZero("composition denominator vanishes")
    return numerator / denominator


# =============================================================================
# Orientation and overlap correction
# =============================================================================


def inverted_faces(
    positions: np.ndarray, faces: np.ndarray, radii: EllipsoidRadii | None = None
) -> np.ndarray:
    """
    Faces of a sphere or ellipsoid map whose normal points inward.

    The test runs after the rescaling h, so it holds on any ellipsoid.
    """
    p = np.asarray(positions, dtype=float)
    if radii is not None:
        p = radii.to_sphere(p)
    corners = p[faces]
    normal = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    return np.einsum("ij,ij->i", normal, corners.mean(axis=1)) < 0


def count_flipped_faces(
    reference: np.ndarray,
    test: np.ndarray,
    faces: np.ndarray,
    radii: EllipsoidRadii | None = None,
    test_radii: EllipsoidRadii | None = None,
) -> int:
    """Number of faces whose orientation differs between two closed maps."""
    test_radii = radii if test_radii is None else test_radii
    return int(
        np.sum(
            inverted_faces(reference, faces, radii)
            != inverted_faces(test, faces, test_radii)
        )
    )


def _stereographic(points: np.ndarray, from_north: bool) -> np.ndarray:
    """Stereographic chart; a vertex on the projection pole goes to infinity."""
    z = points[:, 2]
    denom = (1.0 - z) if from_north else (1.0 + z)
    return np.divide(
        points[:, 0] + 1j * points[:, 1],
        denom,
        out=np.full(len(points), complex(np.inf, 0.0)),
        where=np.abs(denom) >= POLE_TOLERANCE,
    )


def _inverse_stereographic(w: np.ndarray, from_north: bool) -> np.ndarray:
    r2 = np.abs(w) ** 2
    z = (r2 - 1.0) / (r2 + 1.0)
    if not from_north:
        z = -z
    return np.column_stack([2 * w.real / (1 + r2), 2 * w.imag / (1 + r2), z])


def _chart_faces(faces: np.ndarray, core_vertices: np.ndarray) -> np.ndarray:
    """Faces touching the core vertex set, grown by one ring."""
    core = np.zeros(faces.max() + 1, dtype=bool)
    core[core_vertices] = True
    touching = core[faces].any(axis=1)
    ring = np.zeros_like(core)
    ring[faces[touching].ravel()] = True
    return np.flatnonzero(ring[faces].any(axis=1))


def _boundary_vertices(faces: np.ndarray) -> np.ndarray:
    pairs = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    return np.unique(unique[counts == 1])


def _correction_round(
    initial: np.ndarray, current: np.ndarray, faces: np.ndarray
) -> np.ndarray:
    """One pass of two-chart Beltrami correction on the unit sphere."""
    n_vertices = len(current)
    south = np.flatnonzero(initial[:, 2] <= 0)
    north = np.flatnonzero(initial[:, 2] > 0)
    accumulated = np.zeros_like(current)
    hits = np.zeros(n_vertices)

    # south region is charted from the north pole and vice versa
    for core, from_north in ((south, True), (north, False)):
        if len(core) == 0:
            continue
        chart = faces[_chart_faces(faces, core)]
        boundary = _boundary_vertices(chart)
        if len(chart) == len(faces) or len(boundary) < 3:
            logger.debug("Skipping chart that covers the whole sphere")
            continue
        source = _stereographic(initial, from_north)
        target = _stereographic(current, from_north)
        mu = beltrami_of_planar_map(PlanarMap(chart, source, target), strict=False)
        flipped = np.sign(planar_orientation(chart, source)) != np.sign(
            planar_orientation(chart, target)
        )
        mu = truncate_beltrami(mu, flipped | (np.abs(mu) >= BELTRAMI_BOUND))
        solved = lbs_reconstruct(chart, source, mu, boundary, target[boundary])

        members = np.unique(chart)
        interior = np.setdiff1d(members, boundary)
        accumulated[interior] += _inverse_stereographic(solved[interior], from_north)
        hits[interior] += 1

    result = current.copy()
    touched = hits > 0
    result[touched] = accumulated[touched] / hits[touched, None]
    return normalize_rows(result)


def overlap_correction_sphere(
    initial: np.ndarray, current: np.ndarray, faces: np.ndarray
) -> np.ndarray:
    """
    Remove fold-overs of a unit-sphere map relative to a flip-free reference.

    Returns `current` unchanged when nothing is flipped.
    """
    initial = np.asarray(initial, dtype=float)
    current = np.asarray(current, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    reference = inverted_faces(initial, faces)

    flips = int(np.sum(inverted_faces(current, faces) != reference))
    if flips == 0:
        return current.copy()

    corrected = current
    for round_number in range(1, CORRECTION_ROUNDS + 1):
        corrected = _correction_round(initial, corrected, faces)
        flips = int(np.sum(inverted_faces(corrected, faces) != reference))
        logger.debug(f"Overlap correction round {round_number}: {flips} flips left")
        if flips == 0:
            return corrected
    raise CorrectionFailed(flips, CORRECTION_ROUNDS)


def overlap_correction_ellipsoid(
    initial: np.ndarray,
    current: np.ndarray,
    radii: EllipsoidRadii,
    faces: np.ndarray,
) -> np.ndarray:
    """Sphere correction conjugated by the rescaling: h⁻¹ ∘ correct ∘ h."""
    if radii.is_sphere:
        return overlap_correction_sphere(initial, current, faces)
    current = np.asarray(current, dtype=float)
    initial_sphere = normalize_rows(radii.to_sphere(initial))
    current_sphere = normalize_rows(radii.to_sphere(current))
    if not np.any(
        inverted_faces(initial_sphere, faces) != inverted_faces(current_sphere, faces)
    ):
        return current.copy()
    corrected = overlap_correction_sphere(initial_sphere, current_sphere, faces)
    return project_to_ellipsoid(radii.from_sphere(corrected), radii)
