"""
Exception hierarchy for edeqmap.

Provides:
- EdeqMapError: root of every error raised by the library
- ValidationError: bad input (mesh, population, parameters); CLI exit code 1
- NumericalError: a solve or iteration failed; CLI exit code 2
"""


class EdeqMapError(Exception):
    """Base exception for edeqmap errors."""


class ValidationError(EdeqMapError):
    """Raised when an input is rejected before any numerics run."""


class NumericalError(EdeqMapError):
    """Raised when a numerical step fails on otherwise valid input."""


# -----------------------------------------------------------------------------
# Validation errors
# -----------------------------------------------------------------------------


class ParseError(ValidationError):
    """Raised when a mesh or population file cannot be parsed."""


class TopologyError(ValidationError):
    """Raised when a mesh is not a closed, manifold, orientable genus-0 surface."""


class DegenerateFaceError(ValidationError):
    """Raised when a face (or a vertex star) has zero area."""

    def __init__(self, message: str, faces=None):
        self.faces = [] if faces is None else list(faces)
        super().__init__(message)


class ZeroVectorError(ValidationError):
    """Raised when a position at the origin cannot be normalized."""


class ConnectivityMismatch(ValidationError):
    """Raised when two meshes expected to share connectivity do not."""


class PopulationError(ValidationError):
    """Raised when a population specification is malformed or nonpositive."""


class TargetTooSmall(ValidationError):
    """Raised when a remesh target vertex count is below the icosahedron."""

    def __init__(self, target: int, minimum: int):
        self.target = target
        self.minimum = minimum
        super().__init__(
            f"target vertices must be at least {minimum}, got {target}"
        )


class PoleError(ValidationError):
    """Raised when a point coincides with the stereographic projection pole."""


class CoincidentPolesError(ValidationError):
    """Raised when the zero and infinity poles of a Mobius map coincide."""


class LocationFailure(ValidationError):
    """Raised when a sample point lies in no face of a parameterization."""

    def __init__(self, sample: int, residual: float):
        self.sample = sample
        self.residual = residual
        super().__init__(
            f"sample {sample} could not be located "
            f"(best barycentric residual {residual:.3e}); "
            "the parameterization is probably not bijective"
        )


# -----------------------------------------------------------------------------
# Numerical errors
# -----------------------------------------------------------------------------


class SolveError(NumericalError):
    """Raised when a sparse solve does not reach the required residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (relative residual {residual:.3e})")


class ConformalFactorZero(NumericalError):
    """Raised when f_z vanishes on a face (anti-conformal or collapsed image)."""


class BeltramiOutOfRange(NumericalError):
    """Raised when |mu| reaches 1 on a face handed to the Beltrami solver."""


class DenominatorNearZero(NumericalError):
    """Raised when the Beltrami composition formula divides by ~0."""


class CorrectionFailed(NumericalError):
    """Raised when overlap correction leaves flipped faces behind."""

    def __init__(self, flips: int, rounds: int):
        self.flips = flips
        self.rounds = rounds
        super().__init__(
            f"{flips} flipped faces remain after {rounds} correction rounds"
        )


class NonpositiveDensityError(NumericalError):
    """Raised when a density used as a divisor is not strictly positive."""


class StepDiverged(NumericalError):
    """Raised when a single step moves a vertex farther than the domain size."""

    def __init__(self, displacement: float, bound: float):
        self.displacement = displacement
        self.bound = bound
        super().__init__(
            f"step diverged: max displacement {displacement:.3e} exceeds {bound:.3e}"
        )


class ConvergenceError(NumericalError):
    """
    Raised when an iterative pipeline fails partway through.

    Carries whatever was computed before the failure so callers can still
    write partial outputs.
    """

    def __init__(self, message: str, partial_map=None, trace=None):
        self.partial_map = partial_map
        self.trace = trace
        super().__init__(message)
