"""
Initial conformal parameterizations onto spheres and ellipsoids.

Provides:
- ParamMap: per-vertex positions of a mesh on an ellipsoid
- stereographic / inverse_stereographic
- spherical_conformal_map: genus-0 mesh onto the unit sphere
- mobius_normalize: send two chosen vertices to 0 and ∞
- rescale_distribution: radial rescaling of a planar point cloud
- inverse_ellipsoidal_stereographic
- fecm: the full ellipsoidal conformal pipeline
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .constants import (
    FECM_COMPENSATION_PASSES,
    MOBIUS_CENTERING_ITERATIONS,
    MOBIUS_CENTERING_TOLERANCE,
    POLE_TOLERANCE,
    RESCALE_PERCENTILES,
)
from .errors import (
    CoincidentPolesError,
    ConvergenceError,
    NumericalError,
    PoleError,
    ValidationError,
)
from .mesh import (
    EllipsoidRadii,
    TriMesh,
    normalize_rows,
    project_to_ellipsoid,
    signed_volume,
)
from .metrics import edge_lengths, face_regularity
from .operators import cotangent_laplacian, lumped_mass, solve_spd
from .quasiconformal import (
    affine_derivatives,
    beltrami_from_derivatives,
    beltrami_of_plane_to_surface,
    beltrami_of_surface_map,
    compose_with_derivative,
    flatten_faces,
    global_orientation,
    inverted_faces,
    lbs_reconstruct,
    overlap_correction_ellipsoid,
    truncate_beltrami,
)

logger = logging.getLogger(__name__)

UNIT_SPHERE = EllipsoidRadii(1.0, 1.0, 1.0)


@dataclass(frozen=True, eq=False)
class ParamMap:
    """A parameterization: `source` vertex i maps to `positions[i]` on `radii`."""

    source: TriMesh
    positions: np.ndarray
    radii: EllipsoidRadii

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float, copy=True)
        if positions.shape != self.source.vertices.shape:
            raise ValidationError(
                f"positions shape {positions.shape} does not match "
                f"source {self.source.vertices.shape}"
            )
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def faces(self) -> np.ndarray:
        return self.source.faces

    @property
    def mesh(self) -> TriMesh:
        return self.source.with_vertices(self.positions)

    @property
    def flips(self) -> int:
        return int(inverted_faces(self.positions, self.faces, self.radii).sum())

    def rescaled(self, radii: EllipsoidRadii) -> "ParamMap":
        """Carry the map onto another ellipsoid by h_new⁻¹ ∘ h_old."""
        return ParamMap(
            self.source, radii.from_sphere(self.radii.to_sphere(self.positions)), radii
        )


# =============================================================================
# Stereographic projection
# =============================================================================


def _pole_vector(pole: str) -> np.ndarray:
    if pole not in ("north", "south"):
        raise ValidationError(f'pole must be "north" or "south", got {pole!r}')
    return np.array([0.0, 0.0, 1.0 if pole == "north" else -1.0])


def stereographic(points: np.ndarray, pole: str = "north") -> np.ndarray:
    """
    Project unit-sphere points to the complex plane.

    north: (x/(1-z), y/(1-z)); south: (x/(1+z), y/(1+z)).
    """
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    distance = np.linalg.norm(points - _pole_vector(pole), axis=1)
    if np.any(distance < POLE_TOLERANCE):
        raise PoleError(
            f"point {int(np.flatnonzero(distance < POLE_TOLERANCE)[0])} "
            f"is at the {pole} pole"
        )
    denom = 1.0 - points[:, 2] if pole == "north" else 1.0 + points[:, 2]
    w = (points[:, 0] + 1j * points[:, 1]) / denom
    return w[0] if single else w


def inverse_stereographic(w, pole: str = "north") -> np.ndarray:
    """Inverse of stereographic(); for the north pole, 0 goes to (0, 0, -1)."""
    _pole_vector(pole)
    w = np.asarray(w, dtype=complex)
    single = w.ndim == 0
    w = np.atleast_1d(w)
    r2 = np.abs(w) ** 2
    z = (r2 - 1.0) / (r2 + 1.0)
    if pole == "south":
        z = -z
    points = np.column_stack([2 * w.real / (1 + r2), 2 * w.imag / (1 + r2), z])
    return points[0] if single else points


def inverse_ellipsoidal_stereographic(w, radii: EllipsoidRadii) -> np.ndarray:
    """(a·X, b·Y, c·Z) for the north-pole inverse stereographic image (X, Y, Z)."""
    return radii.from_sphere(inverse_stereographic(w, "north"))


# =============================================================================
# Spherical conformal map
# =============================================================================


def _ball_automorphism(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Möbius automorphism of the unit ball sending `center` to the origin."""
    c2 = center @ center
    diff = points - center
    numerator = (1.0 - c2) * diff - np.sum(diff**2, axis=1)[:, None] * center
    denominator = 1.0 - 2.0 * points @ center + c2 * np.sum(points**2, axis=1)
    return numerator / denominator[:, None]


def mobius_center(positions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Iterate ball automorphisms until the weighted centroid is at the origin."""
    weights = np.asarray(weights, dtype=float) / np.sum(weights)
    for _ in range(MOBIUS_CENTERING_ITERATIONS):
        center = weights @ positions
        if np.linalg.norm(center) < MOBIUS_CENTERING_TOLERANCE:
            break
        positions = normalize_rows(_ball_automorphism(positions, center))
    else:
        logger.debug(
            f"Mobius centering stopped at |c| = {np.linalg.norm(weights @ positions):.2e}"
        )
    return positions


def _harmonic_big_triangle(mesh: TriMesh) -> np.ndarray:
    """Harmonic map of the mesh minus its most regular face into an equilateral triangle."""
    regularity = face_regularity(edge_lengths(mesh))
    big = int(np.argmin(regularity))
    fixed = mesh.faces[big]
    anchors = np.exp(2j * np.pi * np.arange(3) / 3)

    L = cotangent_laplacian(mesh)
    free = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
    L_free = L[free]
    rhs = -(L_free[:, fixed] @ np.column_stack([anchors.real, anchors.imag]))
    solution = solve_spd(L_free[:, free], rhs)

    z = np.zeros(mesh.n_vertices, dtype=complex)
    z[fixed] = anchors
    z[free] = solution[:, 0] + 1j * solution[:, 1]

    # balance the sizes of the outermost and innermost triangles on the sphere
    corners = np.abs(z[mesh.faces]).sum(axis=1)
    corners[big] = np.inf
    inner = int(np.argmin(corners))

    def mean_side(face):
        w = z[mesh.faces[face]]
        return np.mean(np.abs(w - np.roll(w, 1)))

    north_side, south_side = mean_side(big), mean_side(inner)
    return z * np.sqrt(north_side / south_side)


def _south_pole_repair(mesh: TriMesh, sphere: np.ndarray) -> np.ndarray:
    """Make the map conformal again near the puncture with one Beltrami solve."""
    reflected = sphere * np.array([1.0, 1.0, -1.0])
    plane = stereographic(reflected, "north")
    mu, _ = beltrami_of_plane_to_surface(mesh.faces, plane, mesh.vertices, strict=False)
    mu = truncate_beltrami(mu)

    count = max(round(mesh.n_vertices / 10), 3)
    fixed = np.argsort(np.abs(plane), kind="stable")[-count:]
    solved = lbs_reconstruct(mesh.faces, plane, mu, fixed, plane[fixed])
    return inverse_stereographic(solved, "north") * np.array([1.0, 1.0, -1.0])


def _radial_projection(mesh: TriMesh) -> np.ndarray | None:
    """Central projection about the area centroid, or None if a vertex sits on it."""
    mass = lumped_mass(mesh)
    offsets = mesh.vertices - (mass @ mesh.vertices) / mass.sum()
    if np.any(np.linalg.norm(offsets, axis=1) < POLE_TOLERANCE):
        return None
    return normalize_rows(offsets)


def spherical_conformal_map(mesh: TriMesh) -> ParamMap:
    """
    Conformal map of a genus-0 mesh onto the unit sphere.

    Harmonic big-triangle map, inverse stereographic projection, a Beltrami
    repair of the region around the removed face, then Möbius centering of
    the source-area distribution. A flip-free central projection with lower
    mean |μ| replaces the harmonic result.
    """
    z = _harmonic_big_triangle(mesh)
    sphere = inverse_stereographic(z, "north")
    if signed_volume(mesh, sphere) < 0:
        sphere = inverse_stereographic(np.conj(z), "north")

    before = int(inverted_faces(sphere, mesh.faces).sum())
    try:
        repaired = _south_pole_repair(mesh, sphere)
    except (PoleError, NumericalError) as e:
        logger.warning(f"Pole repair of the spherical map failed: {e}")
        repaired = sphere
    after = int(inverted_faces(repaired, mesh.faces).sum())
    if np.all(np.isfinite(repaired)) and after <= before:
        sphere = repaired
    else:
        logger.warning(
            f"Skipping pole repair of the spherical map ({after} inverted faces "
            f"after vs {before} before)"
        )

    # central projection replaces the harmonic map when it is flip-free and less distorted
    radial = _radial_projection(mesh)
    if (
        radial is not None
        and not inverted_faces(radial, mesh.faces).any()
        and _mean_mu(mesh, radial) < _mean_mu(mesh, sphere)
    ):
        logger.debug("Using the central projection as the spherical map")
        sphere = radial

    sphere = mobius_center(sphere, lumped_mass(mesh))
    result = ParamMap(mesh, normalize_rows(sphere), UNIT_SPHERE)

    flips = result.flips
    if flips:
        raise ConvergenceError(
            f"spherical conformal map has {flips} inverted faces", partial_map=result
        )
    logger.debug(
        "Spherical conformal map: mean |mu| = "
        f"{np.abs(beltrami_of_surface_map(mesh.faces, mesh.vertices, result.positions, strict=False)).mean():.4f}"
    )
    return result


# =============================================================================
# Planar normalization
# =============================================================================


def mobius_normalize(plane_points, p0: int, pinf: int) -> np.ndarray:
    """
    Apply z ↦ (z - z(p0)) / (z - z(pinf)).

    `pinf` itself is placed on the point of largest remaining modulus. An
    infinite z(pinf) reduces the map to a translation.
    """
    z = np.asarray(plane_points, dtype=complex)
    if p0 == pinf:
        raise CoincidentPolesError("p0 and pinf must be different vertices")
    z0, zinf = z[p0], z[pinf]
    others = np.ones(len(z), dtype=bool)
    others[pinf] = False

    out = np.empty_like(z)
    if not np.isfinite(zinf):
        out[others] = z[others] - z0
    else:
        if abs(z0 - zinf) < POLE_TOLERANCE:
            raise CoincidentPolesError(
                f"vertices {p0} and {pinf} have the same image {z0}"
            )
        gap = z[others] - zinf
        if np.any(np.abs(gap) < POLE_TOLERANCE):
            raise CoincidentPolesError(f"another vertex coincides with vertex {pinf}")
        out[others] = (z[others] - z0) / gap

    moduli = np.where(others, np.abs(out), -np.inf)
    far = int(np.argmax(moduli))
    out[pinf] = out[far] if out[far] != 0 else 1.0
    return out


def weighted_quantile(values: np.ndarray, weights: np.ndarray, probs) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    values, weights = values[order], weights[order]
    cumulative = (np.cumsum(weights) - 0.5 * weights) / weights.sum()
    return np.interp(probs, cumulative, values)


def rescale_distribution(
    plane_points,
    mesh: TriMesh,
    weights: np.ndarray | None = None,
    exclude=(),
) -> np.ndarray:
    """
    Radially rescale planar points toward an equal-area sphere distribution.

    The log-modulus is mapped piecewise linearly so its area-weighted 20th,
    50th and 80th percentiles land on those of a uniform sphere sampling
    (moduli ½, 1, 2), with linear extrapolation past the outer knots.
    """
    z = np.asarray(plane_points, dtype=complex)
    weights = lumped_mass(mesh) if weights is None else np.asarray(weights, dtype=float)
    modulus = np.abs(z)
    valid = (modulus > 0) & np.isfinite(modulus)
    valid[list(exclude)] = False
    if valid.sum() < 3:
        return z.copy()

    log_modulus = np.log(np.where(valid, modulus, 1.0))
    knots = weighted_quantile(log_modulus[valid], weights[valid], RESCALE_PERCENTILES)
    probs = np.asarray(RESCALE_PERCENTILES)
    targets = 0.5 * np.log(probs / (1.0 - probs))

    if np.all(np.diff(knots) > 0):
        low = (targets[1] - targets[0]) / (knots[1] - knots[0])
        high = (targets[2] - targets[1]) / (knots[2] - knots[1])
        mapped = np.interp(log_modulus, knots, targets)
        mapped = np.where(
            log_modulus < knots[0], targets[0] + low * (log_modulus - knots[0]), mapped
        )
        mapped = np.where(
            log_modulus > knots[2], targets[2] + high * (log_modulus - knots[2]), mapped
        )
    else:
        logger.warning("Degenerate modulus distribution; rescaling by the median only")
        mapped = log_modulus - knots[1]

    out = z.copy()
    out[valid] = z[valid] * np.exp(mapped[valid] - log_modulus[valid])
    return out


# =============================================================================
# Ellipsoidal conformal map
# =============================================================================


def principal_poles(mesh: TriMesh) -> tuple[int, int]:
    """Extreme vertices along the first principal axis: (low end, high end)."""
    centered = mesh.vertices - mesh.vertices.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    projection = centered @ axis
    return int(np.argmin(projection)), int(np.argmax(projection))


def _compensate(
    mesh: TriMesh, w: np.ndarray, pinf: int, radii: EllipsoidRadii
) -> np.ndarray:
    """
    Solve for ζ(w) so that E∘ζ has the Beltrami coefficient of the surface.

    Works on the mesh punctured at pinf's star, with its link held fixed.
    """
    disk = mesh.faces[~np.any(mesh.faces == pinf, axis=1)]
    ring = np.unique(mesh.faces[np.any(mesh.faces == pinf, axis=1)])
    ring = ring[ring != pinf]
    constrained = np.append(ring, pinf)

    orientation = global_orientation(disk, w)
    nu, _ = beltrami_of_plane_to_surface(disk, w, mesh.vertices, strict=False)
    source = w[disk]

    zeta = w.copy()
    for _ in range(FECM_COMPENSATION_PASSES):
        image = inverse_ellipsoidal_stereographic(zeta, radii)
        flat = flatten_faces(disk, image, orientation)
        F_z, _ = affine_derivatives(source, flat)
        k_z, k_zbar = affine_derivatives(flat, zeta[disk])
        kappa = beltrami_from_derivatives(k_z, k_zbar, strict=False)
        mu = truncate_beltrami(compose_with_derivative(nu, F_z, kappa))
        zeta = lbs_reconstruct(disk, w, mu, constrained, zeta[constrained])
    return zeta


def _mean_mu(mesh: TriMesh, positions: np.ndarray) -> float:
    return float(
        np.abs(
            beltrami_of_surface_map(mesh.faces, mesh.vertices, positions, strict=False)
        ).mean()
    )


def fecm(mesh: TriMesh, radii: EllipsoidRadii, sphere: ParamMap | None = None) -> ParamMap:
    """
    Ellipsoidal conformal parameterization.

    spherical map → stereographic plane → Möbius normalization of the two
    principal-axis poles → radial rescaling → Beltrami compensation of the
    inverse ellipsoidal stereographic projection → ellipsoid.
    """
    sphere = spherical_conformal_map(mesh) if sphere is None else sphere
    p0, pinf = principal_poles(mesh)

    rotation, _ = Rotation.align_vectors([[0.0, 0.0, -1.0]], [sphere.positions[p0]])
    rotated = normalize_rows(rotation.apply(sphere.positions))
    # flip-free fallback and overlap reference
    reference = project_to_ellipsoid(radii.from_sphere(rotated), radii)

    z = np.empty(mesh.n_vertices, dtype=complex)
    at_pole = np.linalg.norm(rotated - np.array([0.0, 0.0, 1.0]), axis=1) < POLE_TOLERANCE
    if np.any(at_pole & (np.arange(mesh.n_vertices) != pinf)):
        raise PoleError("a vertex other than the infinity pole sits at the north pole")
    z[~at_pole] = stereographic(rotated[~at_pole], "north")
    z[at_pole] = np.inf

    w = mobius_normalize(z, p0, pinf)
    w = rescale_distribution(w, mesh, exclude=(pinf,))

    north = np.array([0.0, 0.0, radii.c])
    uncompensated = inverse_ellipsoidal_stereographic(w, radii)
    uncompensated[pinf] = north

    zeta = _compensate(mesh, w, pinf, radii)
    positions = inverse_ellipsoidal_stereographic(zeta, radii)
    positions[pinf] = north

    if inverted_faces(positions, mesh.faces, radii).any():
        positions = overlap_correction_ellipsoid(reference, positions, radii, mesh.faces)

    before, after = _mean_mu(mesh, uncompensated), _mean_mu(mesh, positions)
    logger.info(f"FECM on {radii}: mean |mu| {before:.4f} -> {after:.4f} after compensation")
    if after > before and not inverted_faces(uncompensated, mesh.faces, radii).any():
        logger.warning("Beltrami compensation did not help; keeping the uncompensated map")
        positions = uncompensated

    result = ParamMap(mesh, project_to_ellipsoid(positions, radii), radii)
    if result.flips:
        fallback = ParamMap(mesh, reference, radii)
        logger.warning(
            f"FECM map has {result.flips} inverted faces; "
            "falling back to the scaled spherical map"
        )
        result = fallback
    return result
