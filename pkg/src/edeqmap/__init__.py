"""
Ellipsoidal density-equalizing maps for genus-0 triangle meshes.

Deform a closed surface onto an ellipsoid so that a prescribed per-face
population ends up uniformly spread, optionally optimizing the ellipsoid's
radii to keep the map close to conformal, and remesh the surface through
the result.

Usage:
    1. Install: pip install edeqmap
    2. Add to INSTALLED_APPS: 'edeqmap' (or run the standalone `edeqmap` script)
    3. Run: python manage.py edeqmap edem --input surface.obj --radii 1,1,1.5
"""

__version__ = "0.1.0"

from .config import (
    ConfigurationError,
    EdemConfig,
    EdeqConfig,
    RemeshConfig,
    RunConfig,
    load_config,
)
from .conformal import ParamMap, fecm, spherical_conformal_map
from .edem import EdemResult, run_edem
from .edeq import EdeqResult, run_edeq
from .errors import ConvergenceError, EdeqMapError, NumericalError, ValidationError
from .mesh import EllipsoidRadii, TriMesh, load_mesh, validate_mesh
from .metrics import DistortionReport, build_distortion_report
from .remesh import RemeshReport, pull_back, remesh_quality, uniform_ellipsoid_mesh

__all__ = [
    "ConfigurationError",
    "ConvergenceError",
    "DistortionReport",
    "EdemConfig",
    "EdemResult",
    "EdeqConfig",
    "EdeqMapError",
    "EdeqResult",
    "EllipsoidRadii",
    "NumericalError",
    "ParamMap",
    "RemeshConfig",
    "RemeshReport",
    "RunConfig",
    "TriMesh",
    "ValidationError",
    "build_distortion_report",
    "fecm",
    "load_config",
    "load_mesh",
    "pull_back",
    "remesh_quality",
    "run_edem",
    "run_edeq",
    "spherical_conformal_map",
    "uniform_ellipsoid_mesh",
    "validate_mesh",
]
