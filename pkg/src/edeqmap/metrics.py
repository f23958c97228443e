"""
Distortion metrics for surface parameterizations.

Provides:
- area_distortion: per-face log ratio of normalized image and source areas
- density_variance: variance of the mean-normalized density
- face_regularity: deviation of edge-length fractions from 1/3
- DistortionReport / build_distortion_report
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConnectivityMismatch, DegenerateFaceError
from .mesh import EllipsoidRadii, TriMesh, face_areas
from .quasiconformal import beltrami_of_surface_map, inverted_faces

logger = logging.getLogger(__name__)


def area_distortion(
    mesh: TriMesh, map_positions: np.ndarray, source_positions: np.ndarray | None = None
) -> np.ndarray:
    """
    d_area(T) = log( (Area f(T) / Σ Area f) / (Area T / Σ Area T) ).

    Zero on every face of an area-preserving map, up to global scale.
    """
    source = face_areas(mesh, source_positions)
    image = face_areas(mesh, map_positions)
    if np.any(source <= 0) or np.any(image <= 0):
        bad = np.flatnonzero((source <= 0) | (image <= 0))
        raise DegenerateFaceError(
            f"area distortion undefined on {len(bad)} zero-area faces", faces=bad
        )
    return np.log((image / image.sum()) / (source / source.sum()))


def density_variance(rho_vertex: np.ndarray) -> float:
    """Population variance of ρ / mean(ρ)."""
    rho = np.asarray(rho_vertex, dtype=float)
    return float(np.var(rho / rho.mean()))


def face_regularity(edge_lengths: np.ndarray) -> np.ndarray:
    """R = Σ_j |e_j / (e_1 + e_2 + e_3) - 1/3| over the last axis."""
    lengths = np.asarray(edge_lengths, dtype=float)
    fractions = lengths / lengths.sum(axis=-1, keepdims=True)
    return np.abs(fractions - 1.0 / 3.0).sum(axis=-1)


def edge_lengths(mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    """(F, 3) lengths of the edges opposite each corner."""
    p = np.asarray(mesh.vertices if positions is None else positions)
    corners = p[mesh.faces]
    return np.linalg.norm(
        corners[:, [2, 0, 1]] - corners[:, [1, 2, 0]], axis=2
    )


@dataclass
class DistortionReport:
    """Per-face distortion columns and their summary statistics."""

    d_area: np.ndarray
    mu_abs: np.ndarray
    flips: int
    density_variance: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_abs_d_area(self) -> float:
        return float(np.mean(np.abs(self.d_area)))

    @property
    def sd_abs_d_area(self) -> float:
        return float(np.std(np.abs(self.d_area)))

    @property
    def mean_abs_mu(self) -> float:
        return float(np.mean(self.mu_abs))

    def to_dict(self) -> dict:
        summary = {
            "mean_abs_d_area": self.mean_abs_d_area,
            "sd_abs_d_area": self.sd_abs_d_area,
            "mean_abs_mu": self.mean_abs_mu,
            "overlaps": self.flips,
            "faces": len(self.d_area),
        }
        if self.density_variance is not None:
            summary["density_variance"] = self.density_variance
        summary.update(self.extra)
        return summary

    def face_rows(self):
        for index, (d, mu) in enumerate(zip(self.d_area, self.mu_abs)):
            yield {"face": index, "d_area": float(d), "mu_abs": float(mu)}


def build_distortion_report(
    source: TriMesh,
    param_positions: np.ndarray,
    radii: EllipsoidRadii | None = None,
    rho_vertex: np.ndarray | None = None,
) -> DistortionReport:
    """Measure a parameterization of `source` given its vertex positions."""
    param_positions = np.asarray(param_positions, dtype=float)
    if param_positions.shape != source.vertices.shape:
        raise ConnectivityMismatch(
            f"parameterization has {len(param_positions)} vertices, "
            f"source has {source.n_vertices}"
        )
    d_area = area_distortion(source, param_positions)
    mu = beltrami_of_surface_map(
        source.faces, source.vertices, param_positions, strict=False
    )
    flips = int(inverted_faces(param_positions, source.faces, radii).sum())
    variance = None if rho_vertex is None else density_variance(rho_vertex)
    return DistortionReport(
        d_area=d_area, mu_abs=np.abs(mu), flips=flips, density_variance=variance
    )
