"""
Ellipsoidal density-equalizing maps.

Provides:
- resolve_population: population presets and CSV input
- velocity_field / project_velocity
- EdemState, TraceRecord, EdemTrace
- edem_step: one diffusion, advection, correction and re-coupling step
- run_edem: iterate from the ellipsoidal conformal map until the vertex
  density is uniform
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import EdemConfig
from .constants import (
    CORRECTION_ROUNDS,
    MU_TRUNCATION,
    STALL_TOLERANCE,
    STALL_WINDOW,
    UPDATE_SIGN_CONVENTION,
)
from .conformal import ParamMap, fecm
from .errors import ConvergenceError, NumericalError, PopulationError, StepDiverged
from .mesh import (
    EllipsoidRadii,
    TriMesh,
    face_areas,
    face_centroids,
    face_to_vertex_matrix,
    project_to_ellipsoid,
    vertex_normals_ellipsoid,
)
from .operators import (
    DensityField,
    check_positive,
    cotangent_laplacian,
    density_gradient,
    diffusion_step,
    lumped_mass,
)
from .quasiconformal import inverted_faces, overlap_correction_ellipsoid

logger = logging.getLogger(__name__)

AXES = {"x": 0, "y": 1, "z": 2}


# =============================================================================
# Population
# =============================================================================


def _read_population_csv(path: str, n_faces: int) -> np.ndarray:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=1, dtype=float)
    except (OSError, ValueError) as e:
        raise PopulationError(f"cannot read population file {path}: {e}") from e
    values = values.ravel()
    if len(values) != n_faces:
        raise PopulationError(
            f"population file has {len(values)} values, mesh has {n_faces} faces"
        )
    return values


def _axis_coordinate(spec: str, centroids: np.ndarray) -> np.ndarray:
    if spec not in AXES:
        raise PopulationError(f"axis must be x, y or z, got {spec!r}")
    return centroids[:, AXES[spec]]


def resolve_population(spec: str, mesh: TriMesh, initial: ParamMap) -> np.ndarray:
    """
    Turn a population spec into per-face values.

    area        original face areas (area-preserving target)
    uniform     1 on every face
    csv:<path>  one value per line, row i for face i
    tworegion:<axis>:<ratio>
                initial-map face areas, times ratio where the face centroid has
                a positive coordinate along the axis
    smooth:<axis>:<amplitude>
                initial-map face areas times 1 + amplitude·t, t the centroid
                coordinate along the axis rescaled to [0, 1]
    """
    kind, _, rest = spec.partition(":")
    if spec == "area":
        population = face_areas(mesh)
    elif spec == "uniform":
        population = np.ones(mesh.n_faces)
    elif kind == "csv":
        population = _read_population_csv(rest, mesh.n_faces)
    elif kind in ("tworegion", "smooth"):
        axis, _, raw = rest.partition(":")
        try:
            value = float(raw)
        except ValueError as e:
            raise PopulationError(f"invalid population parameter {raw!r}") from e
        areas = face_areas(mesh, initial.positions)
        coordinate = _axis_coordinate(axis, face_centroids(mesh, initial.positions))
        if kind == "tworegion":
            population = areas * np.where(coordinate > 0, value, 1.0)
        else:
            span = coordinate.max() - coordinate.min()
            t = (coordinate - coordinate.min()) / (span if span > 0 else 1.0)
            population = areas * (1.0 + value * t)
    else:
        raise PopulationError(f"unknown population spec {spec!r}")

    if not np.all(np.isfinite(population)) or np.any(population <= 0):
        raise PopulationError("population must be positive")
    return population


# =============================================================================
# Velocity
# =============================================================================


def velocity_field(rho_vertex: np.ndarray, grad_rho_vertex: np.ndarray) -> np.ndarray:
    """v = -∇ρ_V / ρ_V per vertex."""
    check_positive(rho_vertex, "vertex density")
    return -np.asarray(grad_rho_vertex) / np.asarray(rho_vertex)[:, None]


def project_velocity(velocity: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Tangential part v - (v·n) n."""
    normal_part = np.einsum("ij,ij->i", velocity, normals)
    return velocity - normal_part[:, None] * normals


# =============================================================================
# Iteration
# =============================================================================


@dataclass(frozen=True)
class EdemState:
    positions: np.ndarray
    density: DensityField


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    sd_over_mean: float
    flips_pre: int
    flips_post: int
    max_displacement: float

    def as_row(self) -> dict:
        return {
            "iteration": self.iteration,
            "sd_over_mean": self.sd_over_mean,
            "flips_pre": self.flips_pre,
            "flips_post": self.flips_post,
            "max_disp": self.max_displacement,
        }


@dataclass
class EdemTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def last(self) -> TraceRecord | None:
        return self.records[-1] if self.records else None

    def rows(self):
        return [record.as_row() for record in self.records]


def edem_step(
    mesh: TriMesh,
    state: EdemState,
    radii: EllipsoidRadii,
    dt: float,
    reference: np.ndarray,
    iteration: int = 0,
) -> tuple[EdemState, TraceRecord]:
    """
    One density-equalizing step on the ellipsoid.

    Diffuse the vertex density, move vertices along the projected velocity
    -∇ρ/ρ, pull them back onto the ellipsoid, undo fold-overs relative to
    `reference`, and re-couple the density to the new face areas.
    """
    positions = state.positions
    L = cotangent_laplacian(mesh, positions)
    A = lumped_mass(mesh, positions)
    rho_next = diffusion_step(state.density.rho_vertex, L, A, dt)

    grad_face = density_gradient(mesh, positions, rho_next)
    grad_vertex = face_to_vertex_matrix(mesh, positions) @ grad_face
    velocity = velocity_field(rho_next, grad_vertex)
    tangential = project_velocity(velocity, vertex_normals_ellipsoid(positions, radii))

    moved = project_to_ellipsoid(positions + dt * tangential, radii)
    reference_inverted = inverted_faces(reference, mesh.faces, radii)
    flips_pre = int(np.sum(inverted_faces(moved, mesh.faces, radii) != reference_inverted))
    if flips_pre:
        moved = overlap_correction_ellipsoid(reference, moved, radii, mesh.faces)
    flips_post = int(np.sum(inverted_faces(moved, mesh.faces, radii) != reference_inverted))

    displacement = float(np.max(np.linalg.norm(moved - positions, axis=1)))
    if not np.isfinite(displacement) or displacement > radii.max_radius:
        raise StepDiverged(displacement, radii.max_radius)

    density = DensityField.couple(mesh, moved, state.density.population)
    record = TraceRecord(
        iteration=iteration,
        sd_over_mean=density.sd_over_mean,
        flips_pre=flips_pre,
        flips_post=flips_post,
        max_displacement=displacement,
    )
    return EdemState(moved, density), record


@dataclass
class EdemResult:
    """Outcome of run_edem()."""

    param: ParamMap
    initial: ParamMap
    trace: EdemTrace
    density: DensityField
    initial_density: DensityField
    converged: bool
    stalled: bool
    iterations: int
    runtime: float

    @property
    def decisions(self) -> dict:
        return {
            "update_sign": UPDATE_SIGN_CONVENTION,
            "mu_truncation": MU_TRUNCATION,
            "max_correction_rounds": CORRECTION_ROUNDS,
            "corrected_steps": sum(1 for r in self.trace.records if r.flips_pre),
            "stalled": self.stalled,
        }


def run_edem(
    mesh: TriMesh,
    config: EdemConfig,
    population: np.ndarray | str = "area",
    initial: ParamMap | None = None,
) -> EdemResult:
    """
    Iterate edem_step from the ellipsoidal conformal map.

    Stops when sd(ρ_V)/mean(ρ_V) < epsilon, when n_max is reached, or when
    no new best ratio has appeared for STALL_WINDOW iterations while the
    current ratio sits more than STALL_TOLERANCE above the best (the best map
    seen is returned).
    """
    config.validate()
    started = time.monotonic()
    radii = config.radii
    initial = fecm(mesh, radii) if initial is None else initial
    if isinstance(population, str):
        population = resolve_population(population, mesh, initial)
    elif np.any(~(np.asarray(population) > 0)):
        raise PopulationError("population must be positive")

    reference = initial.positions
    state = EdemState(
        np.array(initial.positions), DensityField.couple(mesh, initial.positions, population)
    )
    initial_density = state.density
    trace = EdemTrace()
    best_state, best_ratio, best_iteration = state, state.density.sd_over_mean, 0
    converged = best_ratio < config.epsilon
    stalled = False
    iteration = 0
    logger.info(
        f"EDEM on {radii}: {mesh.n_vertices} vertices, initial sd/mean {best_ratio:.4e}"
    )

    while not converged and iteration < config.n_max:
        iteration += 1
        try:
            state, record = edem_step(mesh, state, radii, config.dt, reference, iteration)
        except NumericalError as e:
            raise ConvergenceError(
                f"EDEM failed at iteration {iteration}: {e}",
                partial_map=ParamMap(mesh, best_state.positions, radii),
                trace=trace,
            ) from e
        trace.append(record)

        if iteration % config.log_every == 0:
            logger.info(
                f"EDEM iteration {iteration}: sd/mean {record.sd_over_mean:.4e}, "
                f"flips {record.flips_pre} -> {record.flips_post}, "
                f"max displacement {record.max_displacement:.3e}"
            )

        if record.flips_post == 0 and record.sd_over_mean < best_ratio:
            best_state, best_ratio, best_iteration = state, record.sd_over_mean, iteration
        if record.sd_over_mean < config.epsilon and record.flips_post == 0:
            converged = True
        elif (
            iteration - best_iteration >= STALL_WINDOW
            and record.sd_over_mean > (1.0 + STALL_TOLERANCE) * best_ratio
        ):
            stalled = True
            logger.warning(
                f"EDEM stalled: no improvement for {iteration - best_iteration} iterations; "
                f"returning the best map (iteration {best_iteration}, "
                f"sd/mean {best_ratio:.4e})"
            )
            break

    if not converged and not stalled:
        logger.warning(
            f"EDEM reached n_max = {config.n_max} with sd/mean {best_ratio:.4e} "
            f"(epsilon {config.epsilon:.1e})"
        )

    final = best_state if (stalled or not converged) else state
    result = EdemResult(
        param=ParamMap(mesh, final.positions, radii),
        initial=initial,
        trace=trace,
        density=final.density,
        initial_density=initial_density,
        converged=converged,
        stalled=stalled,
        iterations=iteration,
        runtime=time.monotonic() - started,
    )
    logger.info(
        f"EDEM finished after {iteration} iterations in {result.runtime:.1f}s "
        f"(sd/mean {final.density.sd_over_mean:.4e}, converged={converged})"
    )
    return result
