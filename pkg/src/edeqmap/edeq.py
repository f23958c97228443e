"""
Ellipsoidal density-equalizing quasi-conformal maps.

Minimizes E = E_edem + α·E_bc over the map and the radii (b, c): every
iteration takes a density-equalizing descent step, and every K-th iteration
tries the nine neighbouring radius pairs and keeps the best.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import EdeqConfig, thread_limit
from .constants import (
    CORRECTION_ROUNDS,
    ENERGY_TIE_TOLERANCE,
    MU_TRUNCATION,
    SHAPE_CANDIDATES,
    STEP_DECAY,
    UPDATE_SIGN_CONVENTION,
)
from .conformal import ParamMap, fecm
from .edem import EdemState, EdemTrace, edem_step, resolve_population
from .errors import ConvergenceError, NumericalError, PopulationError
from .mesh import EllipsoidRadii, TriMesh, face_areas
from .operators import DensityField, check_positive, density_gradient
from .quasiconformal import beltrami_of_surface_map, inverted_faces

logger = logging.getLogger(__name__)


# =============================================================================
# Energies
# =============================================================================


def energy_edem(mesh: TriMesh, positions: np.ndarray, density: DensityField) -> float:
    """Σ_T Area(T)·‖∇ρ(T) / ρ_F(T)‖² on the current positions."""
    check_positive(density.rho_face, "face density")
    gradient = density_gradient(mesh, positions, density.rho_vertex)
    ratio = gradient / density.rho_face[:, None]
    return float(np.sum(face_areas(mesh, positions) * np.sum(ratio**2, axis=1)))


def energy_bc(
    faces: np.ndarray,
    initial_positions: np.ndarray,
    positions: np.ndarray,
    initial_areas: np.ndarray | None = None,
) -> float:
    """Σ_T Area(T⁰)·|μ_T|², μ of the map from the initial parameterization."""
    mu = beltrami_of_surface_map(faces, initial_positions, positions, strict=False)
    if initial_areas is None:
        p = np.asarray(initial_positions)
        initial_areas = 0.5 * np.linalg.norm(
            np.cross(p[faces[:, 1]] - p[faces[:, 0]], p[faces[:, 2]] - p[faces[:, 0]]),
            axis=1,
        )
    return float(np.sum(initial_areas * np.abs(mu) ** 2))


@dataclass(frozen=True)
class EnergyRecord:
    iteration: int
    e_edem: float
    e_bc: float
    alpha: float
    radii: EllipsoidRadii
    flips: int = 0

    @property
    def energy(self) -> float:
        return self.e_edem + self.alpha * self.e_bc

    def as_row(self) -> dict:
        return {
            "iteration": self.iteration,
            "E_edem": self.e_edem,
            "E_bc": self.e_bc,
            "E": self.energy,
            "a": self.radii.a,
            "b": self.radii.b,
            "c": self.radii.c,
            "flips": self.flips,
        }


@dataclass
class EnergyReport:
    """Energy history of an EDEQ run; the last record is the final state."""

    alpha: float
    history: list[EnergyRecord] = field(default_factory=list)

    @property
    def e_edem(self) -> float:
        return self.history[-1].e_edem

    @property
    def e_bc(self) -> float:
        return self.history[-1].e_bc

    @property
    def energy(self) -> float:
        return self.history[-1].energy

    def rows(self):
        return [record.as_row() for record in self.history]


# =============================================================================
# Descent and shape update
# =============================================================================


def e1_descent_step(
    mesh: TriMesh,
    state: EdemState,
    radii: EllipsoidRadii,
    dt: float,
    reference: np.ndarray,
    iteration: int = 0,
):
    """Descent step for E_edem; its direction is the projected EDEM velocity."""
    return edem_step(mesh, state, radii, dt, reference, iteration)


@dataclass(frozen=True)
class Candidate:
    steps: tuple[int, int]
    radii: EllipsoidRadii
    positions: np.ndarray
    density: DensityField
    e_edem: float
    e_bc: float
    alpha: float

    @property
    def energy(self) -> float:
        return self.e_edem + self.alpha * self.e_bc

    @property
    def rank(self) -> tuple:
        k_b, k_c = self.steps
        return (abs(k_b) + abs(k_c), k_b, k_c)


def _evaluate_candidate(
    mesh, positions, radii, steps, candidate_radii, population, alpha, initial, initial_areas
) -> Candidate:
    moved = candidate_radii.from_sphere(radii.to_sphere(positions))
    density = DensityField.couple(mesh, moved, population)
    return Candidate(
        steps=steps,
        radii=candidate_radii,
        positions=moved,
        density=density,
        e_edem=energy_edem(mesh, moved, density),
        e_bc=energy_bc(mesh.faces, initial, moved, initial_areas),
        alpha=alpha,
    )


def select_candidate(candidates: list[Candidate]) -> Candidate:
    """Lowest energy; ties within tolerance prefer small, then lexicographic, steps."""
    lowest = min(c.energy for c in candidates)
    tied = [c for c in candidates if abs(c.energy - lowest) <= ENERGY_TIE_TOLERANCE]
    return min(tied, key=lambda c: c.rank)


def shape_update(
    mesh: TriMesh,
    positions: np.ndarray,
    population: np.ndarray,
    radii: EllipsoidRadii,
    db: float,
    dc: float,
    alpha: float,
    initial_positions: np.ndarray,
    initial_areas: np.ndarray | None = None,
) -> Candidate:
    """
    Try (a, b + k_b·db, c + k_c·dc) for k_b, k_c ∈ {-1, 0, 1} and keep the best.

    Positions move to each candidate by h_candidate⁻¹ ∘ h_current and the
    density is re-coupled there before the energy is evaluated. a is never
    changed; candidates with a nonpositive radius are skipped.
    """
    options = []
    for k_b, k_c in SHAPE_CANDIDATES:
        b, c = radii.b + k_b * db, radii.c + k_c * dc
        if b <= 0 or c <= 0:
            continue
        options.append(((k_b, k_c), EllipsoidRadii(radii.a, b, c)))

    def evaluate(option):
        steps, candidate_radii = option
        return _evaluate_candidate(
            mesh,
            positions,
            radii,
            steps,
            candidate_radii,
            population,
            alpha,
            initial_positions,
            initial_areas,
        )

    with ThreadPoolExecutor(max_workers=min(thread_limit(), len(options))) as pool:
        candidates = list(pool.map(evaluate, options))

    best = select_candidate(candidates)
    logger.debug(
        "Shape update energies: "
        + ", ".join(f"{c.steps}: {c.energy:.6e}" for c in candidates)
    )
    return best


# =============================================================================
# Driver
# =============================================================================


@dataclass
class EdeqResult:
    """Outcome of run_edeq()."""

    param: ParamMap
    initial: ParamMap
    radii: EllipsoidRadii
    energy: EnergyReport
    trace: EdemTrace
    density: DensityField
    initial_density: DensityField
    step_scales: list[float]
    converged: bool
    iterations: int
    runtime: float

    @property
    def decisions(self) -> dict:
        return {
            "update_sign": UPDATE_SIGN_CONVENTION,
            "mu_truncation": MU_TRUNCATION,
            "max_correction_rounds": CORRECTION_ROUNDS,
            "corrected_steps": sum(1 for r in self.trace.records if r.flips_pre),
            "shape_candidates": "current map rescaled by the ellipsoid map",
            "energy_quadrature": "face sums; E_edem on current areas, E_bc on initial areas",
        }


def run_edeq(
    mesh: TriMesh,
    config: EdeqConfig,
    population: np.ndarray | str = "area",
    initial: ParamMap | None = None,
) -> EdeqResult:
    """
    Minimize E_edem + α·E_bc over the map and the radii b, c.

    At iteration n = K·m (m ≥ 1) the radii are updated with steps
    STEP_DECAY**m · (db, dc); then a descent step follows. Stops when
    |ΔE/E| < epsilon, E = 0, or n reaches n_max.
    """
    config.validate()
    started = time.monotonic()
    radii = config.radii
    initial = fecm(mesh, radii) if initial is None else initial
    if isinstance(population, str):
        population = resolve_population(population, mesh, initial)
    elif np.any(~(np.asarray(population) > 0)):
        raise PopulationError("population must be positive")

    initial_positions = np.array(initial.positions)
    initial_areas = face_areas(mesh, initial_positions)
    state = EdemState(
        np.array(initial.positions), DensityField.couple(mesh, initial.positions, population)
    )
    initial_density = state.density
    trace = EdemTrace()
    report = EnergyReport(alpha=config.alpha)
    step_scales = []

    def record(iteration, flips=0):
        entry = EnergyRecord(
            iteration=iteration,
            e_edem=energy_edem(mesh, state.positions, state.density),
            e_bc=energy_bc(mesh.faces, initial_positions, state.positions, initial_areas),
            alpha=config.alpha,
            radii=radii,
            flips=flips,
        )
        report.history.append(entry)
        return entry

    previous = record(0)
    converged = previous.energy == 0
    iteration = 0
    logger.info(
        f"EDEQ from {radii}: {mesh.n_vertices} vertices, alpha {config.alpha}, "
        f"initial E {previous.energy:.6e}"
    )

    while not converged and iteration < config.n_max:
        try:
            if iteration > 0 and iteration % config.K == 0:
                m = iteration // config.K
                scale = STEP_DECAY**m
                step_scales.append(scale)
                best = shape_update(
                    mesh,
                    state.positions,
                    population,
                    radii,
                    scale * config.db,
                    scale * config.dc,
                    config.alpha,
                    initial_positions,
                    initial_areas,
                )
                if best.radii != radii:
                    logger.info(f"EDEQ shape update {m}: radii {radii} -> {best.radii}")
                radii = best.radii
                state = EdemState(best.positions, best.density)

            reference = initial.rescaled(radii).positions
            iteration += 1
            state, step = e1_descent_step(
                mesh, state, radii, config.dt, reference, iteration
            )
        except NumericalError as e:
            raise ConvergenceError(
                f"EDEQ failed at iteration {iteration}: {e}",
                partial_map=ParamMap(mesh, state.positions, radii),
                trace=report,
            ) from e
        trace.append(step)
        current = record(iteration, step.flips_post)

        if iteration % config.log_every == 0:
            logger.info(
                f"EDEQ iteration {iteration}: E {current.energy:.6e} "
                f"(E_edem {current.e_edem:.4e}, E_bc {current.e_bc:.4e}), radii {radii}"
            )

        if current.energy == 0 or (
            previous.energy > 0
            and abs((current.energy - previous.energy) / previous.energy) < config.epsilon
        ):
            converged = True
        previous = current

    if not converged:
        logger.warning(
            f"EDEQ reached n_max = {config.n_max} with E {previous.energy:.6e}"
        )

    param = ParamMap(mesh, state.positions, radii)
    flips = int(inverted_faces(param.positions, mesh.faces, radii).sum())
    if flips:
        raise ConvergenceError(
            f"EDEQ result has {flips} inverted faces", partial_map=param, trace=report
        )
    result = EdeqResult(
        param=param,
        initial=initial,
        radii=radii,
        energy=report,
        trace=trace,
        density=state.density,
        initial_density=initial_density,
        step_scales=step_scales,
        converged=converged,
        iterations=iteration,
        runtime=time.monotonic() - started,
    )
    logger.info(
        f"EDEQ finished after {iteration} iterations in {result.runtime:.1f}s: "
        f"radii {radii}, E {report.energy:.6e}"
    )
    return result
