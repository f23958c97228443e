"""
Constants for edeqmap.

This module contains only pure Python constants with NO Django imports,
making it safe to import in Django settings.py files.
"""

# =============================================================================
# EDEM DEFAULTS (fixed-radius density equalization)
# =============================================================================
# Override in settings.py with the EDEQMAP_ prefix, e.g.
#   EDEQMAP_DT = 0.05
#   EDEQMAP_EPSILON = 1e-4

DEFAULT_DT = 0.1  # backward Euler time step
DEFAULT_EDEM_EPSILON = 1e-3  # stop when sd(rho_V)/mean(rho_V) drops below this
DEFAULT_N_MAX = 300  # iteration cap

# =============================================================================
# EDEQ DEFAULTS (density-equalizing quasi-conformal, radii optimized)
# =============================================================================

DEFAULT_EDEQ_EPSILON = 1e-5  # relative energy change threshold
DEFAULT_K = 5  # descent iterations per fixed set of radii
DEFAULT_DB = 0.1  # initial step for radius b
DEFAULT_DC = 0.1  # initial step for radius c
DEFAULT_ALPHA = 1.0  # weight of the Beltrami energy
STEP_DECAY = 0.9  # radius steps shrink by STEP_DECAY**m at the m-th update
ENERGY_TIE_TOLERANCE = 1e-12

# Shape-update candidates (k_b, k_c) in evaluation order; (0, 0) first
SHAPE_CANDIDATES = (
    (0, 0),
    (0, 1),
    (0, -1),
    (1, 0),
    (1, 1),
    (1, -1),
    (-1, 0),
    (-1, 1),
    (-1, -1),
)

# =============================================================================
# DEFAULT RADII
# =============================================================================

DEFAULT_RADII = (1.0, 1.0, 1.0)

# =============================================================================
# NUMERICAL THRESHOLDS
# =============================================================================

DEGENERACY_FACTOR = 1e-12  # face area floor, relative to bbox diagonal squared
DENSITY_CLAMP_FACTOR = 1e-8  # nonpositive densities clamp to this times mean
POLE_TOLERANCE = 1e-12
CONFORMAL_FACTOR_FLOOR = 1e-14
DENOMINATOR_FLOOR = 1e-14
BELTRAMI_BOUND = 1.0 - 1e-6  # |mu| at or above this is out of range for LBS
MU_TRUNCATION = 0.9  # overlap correction clamps |mu| to this on bad faces
CORRECTION_ROUNDS = 5
SOLVER_RTOL = 1e-10
CG_MAXITER_FACTOR = 10  # conjugate gradient gets at most this many times n steps
STALL_WINDOW = 10  # iterations without a new best before checking for drift
STALL_TOLERANCE = 0.05  # relative rise above the best sd/mean that counts as drift
MOBIUS_CENTERING_ITERATIONS = 50
MOBIUS_CENTERING_TOLERANCE = 1e-9
FECM_COMPENSATION_PASSES = 3
RESCALE_PERCENTILES = (0.2, 0.5, 0.8)

# =============================================================================
# REMESHING
# =============================================================================

DEFAULT_TARGET_VERTICES = 8500
MIN_TARGET_VERTICES = 12  # an icosahedron
SMOOTHING_ITERATIONS = 30
SMOOTHING_STEP = 0.5
LOCATION_TOLERANCE = 1e-6
LOCATION_NEIGHBORS = 16
DEFAULT_SEED = 0

# =============================================================================
# REPORTING
# =============================================================================

DEFAULT_LOG_EVERY = 10
UPDATE_SIGN_CONVENTION = "+v"  # vertices move along -grad(rho)/rho

POPULATION_PRESETS = ("area", "uniform")
REMESH_METHODS = ("scm", "sdem", "fecm", "edem", "edeq")
MESH_FORMATS = ("obj", "off")
