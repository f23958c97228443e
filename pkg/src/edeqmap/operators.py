"""
Finite-element operators on triangle meshes and the SPD solver behind them.

Provides:
- cotangent_laplacian: symmetric stiffness matrix with cotangent weights
- lumped_mass: one third of the incident face areas per vertex
- DensityField: population, face density and vertex density, coupled
- diffusion_step: one backward Euler step of (A + dt L) ρ' = A ρ
- density_gradient: per-face gradient of the linearly interpolated density
- solve_spd: sparse Cholesky (or LU) with a conjugate-gradient fallback
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .constants import CG_MAXITER_FACTOR, DENSITY_CLAMP_FACTOR, SOLVER_RTOL
from .errors import DegenerateFaceError, NonpositiveDensityError, SolveError
from .mesh import TriMesh, as_3d, face_areas, face_cross, face_to_vertex_matrix

try:
    from sksparse.cholmod import CholmodError, cholesky
except ImportError:  # optional extra
    cholesky = None
    CholmodError = None

logger = logging.getLogger(__name__)


# =============================================================================
# Operators
# =============================================================================


def cotangent_laplacian(
    mesh: TriMesh, positions: np.ndarray | None = None
) -> sparse.csr_matrix:
    """
    Cotangent Laplacian L.

    Off-diagonal L_ij = -½(cot α_ij + cot β_ij); the diagonal makes rows sum
    to zero. Works for surface (n, 3) and planar (n, 2) or complex positions.
    """
    p = as_3d(mesh.vertices if positions is None else positions)
    faces = mesh.faces
    twice_area = np.linalg.norm(face_cross(faces, p), axis=1)
    if np.any(twice_area == 0):
        raise DegenerateFaceError(
            "zero-area face in cotangent Laplacian",
            faces=np.flatnonzero(twice_area == 0),
        )

    rows, cols, weights = [], [], []
    for k in range(3):
        i = faces[:, (k + 1) % 3]
        j = faces[:, (k + 2) % 3]
        u = p[i] - p[faces[:, k]]
        v = p[j] - p[faces[:, k]]
        cot = np.einsum("ij,ij->i", u, v) / twice_area
        rows += [i, j]
        cols += [j, i]
        weights += [-0.5 * cot, -0.5 * cot]

    n = len(p)
    off = sparse.coo_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    diagonal = -np.asarray(off.sum(axis=1)).ravel()
    return sparse.csr_matrix(off + sparse.diags(diagonal))


def lumped_mass(mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    """Diagonal of the lumped mass matrix, A_ii = ⅓ Σ_{T ∋ i} Area(T)."""
    areas = face_areas(mesh, positions)
    return np.bincount(
        mesh.faces.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=mesh.n_vertices
    )


@dataclass(frozen=True)
class DensityField:
    """Population per face with the densities derived from it."""

    population: np.ndarray
    rho_face: np.ndarray
    rho_vertex: np.ndarray

    @classmethod
    def couple(
        cls, mesh: TriMesh, positions: np.ndarray, population: np.ndarray
    ) -> "DensityField":
        """Recompute ρ_F = population / area and ρ_V = M ρ_F on `positions`."""
        population = np.asarray(population, dtype=float)
        rho_face = population / face_areas(mesh, positions)
        rho_vertex = face_to_vertex_matrix(mesh, positions) @ rho_face
        return cls(population, rho_face, rho_vertex)

    @property
    def sd_over_mean(self) -> float:
        return float(np.std(self.rho_vertex) / np.mean(self.rho_vertex))


def diffusion_step(
    rho_vertex: np.ndarray, L: sparse.spmatrix, A: np.ndarray, dt: float
) -> np.ndarray:
    """Backward Euler diffusion: solve (A + dt·L) ρ' = A ρ."""
    system = sparse.diags(A) + dt * L
    rho_next = solve_spd(system, A * rho_vertex)

    nonpositive = rho_next <= 0
    if nonpositive.any():
        floor = DENSITY_CLAMP_FACTOR * float(np.mean(rho_vertex))
        logger.warning(
            f"Diffusion produced {int(nonpositive.sum())} nonpositive vertex "
            f"densities; clamping to {floor:.3e}"
        )
        rho_next = np.where(nonpositive, floor, rho_next)
    return rho_next


def density_gradient(
    mesh: TriMesh, positions: np.ndarray, rho_vertex: np.ndarray
) -> np.ndarray:
    """
    Gradient of the piecewise-linear density on each face.

    ∇ρ(T) = n × (ρ_i e_jk + ρ_j e_ki + ρ_k e_ij) / (2 Area(T)), e_jk = p_k - p_j.
    """
    p = np.asarray(positions, dtype=float)
    f = mesh.faces
    cross = face_cross(f, p)
    twice_area = np.linalg.norm(cross, axis=1)
    if np.any(twice_area == 0):
        raise DegenerateFaceError(
            "zero-area face in density gradient", faces=np.flatnonzero(twice_area == 0)
        )
    normal = cross / twice_area[:, None]
    pi, pj, pk = p[f[:, 0]], p[f[:, 1]], p[f[:, 2]]
    rho = np.asarray(rho_vertex, dtype=float)[f]
    combo = (
        rho[:, 0, None] * (pk - pj)
        + rho[:, 1, None] * (pi - pk)
        + rho[:, 2, None] * (pj - pi)
    )
    return np.cross(normal, combo) / twice_area[:, None]


def check_positive(rho: np.ndarray, what: str = "density"):
    if np.any(~(np.asarray(rho) > 0)):
        raise NonpositiveDensityError(
            f"{what} must be strictly positive "
            f"({int(np.sum(~(np.asarray(rho) > 0)))} entries are not)"
        )


# =============================================================================
# Solver
# =============================================================================


def _relative_residual(matrix, x: np.ndarray, b: np.ndarray) -> float:
    scale = np.linalg.norm(b, axis=0)
    scale = np.where(scale == 0, 1.0, scale)
    return float(np.max(np.linalg.norm(matrix @ x - b, axis=0) / scale))


def _factorize(matrix: sparse.csc_matrix):
    if cholesky is not None:
        try:
            return cholesky(matrix)
        except CholmodError as e:
            logger.debug(f"CHOLMOD factorization failed ({e}); falling back to LU")
    return splinalg.splu(matrix).solve


def _cg_columns(matrix, b: np.ndarray, x0: np.ndarray, rtol: float) -> np.ndarray:
    diagonal = matrix.diagonal()
    inverse = np.divide(1.0, diagonal, out=np.ones_like(diagonal), where=diagonal != 0)
    preconditioner = sparse.diags(inverse)
    maxiter = CG_MAXITER_FACTOR * matrix.shape[0]
    columns = []
    for k in range(b.shape[1]):
        x, info = splinalg.cg(
            matrix, b[:, k], x0=x0[:, k], rtol=rtol, maxiter=maxiter, M=preconditioner
        )
        if info < 0:
            raise SolveError("conjugate gradient breakdown")
        columns.append(x)
    return np.column_stack(columns)


def solve_spd(matrix: sparse.spmatrix, b: np.ndarray, rtol: float = SOLVER_RTOL) -> np.ndarray:
    """
    Solve a sparse symmetric positive definite system.

    Direct factorization first (CHOLMOD when installed, SuperLU otherwise)
    with one round of iterative refinement, then Jacobi-preconditioned
    conjugate gradient if the residual is still above `rtol`. `b` may hold
    several right-hand sides as columns.
    """
    matrix = sparse.csc_matrix(matrix)
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    rhs = b[:, None] if vector else b
    if not np.any(rhs):
        return np.zeros_like(b)

    x = None
    residual = float("inf")
    try:
        solve = _factorize(matrix)
        x = np.asarray(solve(rhs)).reshape(rhs.shape)
        x = x + np.asarray(solve(rhs - matrix @ x)).reshape(rhs.shape)
        residual = _relative_residual(matrix, x, rhs)
    except (RuntimeError, ValueError) as e:
        logger.debug(f"Direct solve failed ({e}); trying conjugate gradient")

    if x is None or not np.all(np.isfinite(x)):
        x = np.zeros_like(rhs)
        residual = float("inf")

    if residual > rtol:
        logger.debug(
            f"Direct solve residual {residual:.3e} above {rtol:.0e}; "
            "refining with conjugate gradient"
        )
        x = _cg_columns(matrix, rhs, x, 0.1 * rtol)
        residual = _relative_residual(matrix, x, rhs)
        if not residual <= rtol:
            raise SolveError(f"sparse solve of size {matrix.shape[0]} failed", residual)

    return x.ravel() if vector else x
