"""
Configuration for edeqmap runs.

Loads configuration in layers: built-in defaults, Django settings
(EDEQMAP_*), a JSON config file, then explicit command-line options.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from django.conf import settings

from .constants import (
    DEFAULT_ALPHA,
    DEFAULT_DB,
    DEFAULT_DC,
    DEFAULT_DT,
    DEFAULT_EDEM_EPSILON,
    DEFAULT_EDEQ_EPSILON,
    DEFAULT_K,
    DEFAULT_LOG_EVERY,
    DEFAULT_N_MAX,
    DEFAULT_RADII,
    DEFAULT_SEED,
    DEFAULT_TARGET_VERTICES,
    MIN_TARGET_VERTICES,
    POPULATION_PRESETS,
    REMESH_METHODS,
)
from .errors import ValidationError
from .mesh import EllipsoidRadii


class ConfigurationError(ValidationError):
    """Raised when configuration is invalid or missing."""


COMMANDS = ("edem", "edeq", "remesh", "metrics")

# Django settings consulted for each canonical key
SETTINGS_NAMES = {
    "dt": "EDEQMAP_DT",
    "epsilon": "EDEQMAP_EPSILON",
    "n_max": "EDEQMAP_N_MAX",
    "alpha": "EDEQMAP_ALPHA",
    "K": "EDEQMAP_K",
    "db": "EDEQMAP_DB",
    "dc": "EDEQMAP_DC",
    "radii": "EDEQMAP_RADII",
    "population": "EDEQMAP_POPULATION",
    "method": "EDEQMAP_REMESH_METHOD",
    "target_vertices": "EDEQMAP_TARGET_VERTICES",
    "seed": "EDEQMAP_SEED",
    "log_every": "EDEQMAP_LOG_EVERY",
}


@dataclass
class EdemConfig:
    """Parameters of the fixed-radius density-equalizing iteration."""

    radii: EllipsoidRadii = field(default_factory=lambda: EllipsoidRadii(*DEFAULT_RADII))
    dt: float = DEFAULT_DT
    epsilon: float = DEFAULT_EDEM_EPSILON
    n_max: int = DEFAULT_N_MAX
    log_every: int = DEFAULT_LOG_EVERY

    def validate(self):
        _check_positive("dt", self.dt)
        _check_positive("epsilon", self.epsilon)
        _check_count("n_max", self.n_max)
        _check_count("log_every", self.log_every)


@dataclass
class EdeqConfig:
    """Parameters of the combined-energy descent with radius updates."""

    radii: EllipsoidRadii = field(default_factory=lambda: EllipsoidRadii(*DEFAULT_RADII))
    dt: float = DEFAULT_DT
    db: float = DEFAULT_DB
    dc: float = DEFAULT_DC
    K: int = DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EDEQ_EPSILON
    n_max: int = DEFAULT_N_MAX
    log_every: int = DEFAULT_LOG_EVERY

    def validate(self):
        _check_positive("dt", self.dt)
        _check_positive("db", self.db)
        _check_positive("dc", self.dc)
        _check_count("K", self.K)
        _check_positive("epsilon", self.epsilon)
        _check_count("n_max", self.n_max)
        _check_count("log_every", self.log_every)
        if not self.alpha >= 0:
            raise ConfigurationError(f"alpha must be nonnegative, got {self.alpha}")


@dataclass
class RemeshConfig:
    """Parameterization backend and target mesh for the remeshing pipeline."""

    method: str = "edeq"
    target_vertices: int = DEFAULT_TARGET_VERTICES
    seed: int = DEFAULT_SEED

    def validate(self):
        if self.method not in REMESH_METHODS:
            raise ConfigurationError(
                f"method must be one of {', '.join(REMESH_METHODS)}, got {self.method!r}"
            )
        if not isinstance(self.target_vertices, int):
            raise ConfigurationError(
                f"target vertices must be an integer, got {self.target_vertices!r}"
            )
        if self.target_vertices < MIN_TARGET_VERTICES:
            raise ConfigurationError(
                f"target vertices must be at least {MIN_TARGET_VERTICES}, "
                f"got {self.target_vertices}"
            )
        if not isinstance(self.seed, int):
            raise ConfigurationError(f"seed must be an integer, got {self.seed!r}")


@dataclass
class RunConfig:
    """
    Everything one command invocation needs, with every default materialized.

    to_dict() is the canonical JSON written next to each run's outputs;
    feeding it back through --config reproduces the run.
    """

    command: str
    input: str = ""
    output: str = "."
    param: str = ""
    population: str = "area"
    radii: tuple[float, float, float] = DEFAULT_RADII
    dt: float = DEFAULT_DT
    epsilon: float = DEFAULT_EDEM_EPSILON
    n_max: int = DEFAULT_N_MAX
    alpha: float = DEFAULT_ALPHA
    K: int = DEFAULT_K
    db: float = DEFAULT_DB
    dc: float = DEFAULT_DC
    method: str = "edeq"
    target_vertices: int = DEFAULT_TARGET_VERTICES
    seed: int = DEFAULT_SEED
    log_every: int = DEFAULT_LOG_EVERY
    dump_mu: bool = False

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}")
        if not self.input:
            raise ConfigurationError("an input mesh is required (--input)")
        if self.command == "metrics" and not self.param:
            raise ConfigurationError("metrics needs a parameterization mesh (--param)")
        self.radii_value()
        _check_population(self.population)
        self.remesh_config().validate()
        self.edem_config().validate()
        self.edeq_config().validate()

    def radii_value(self) -> EllipsoidRadii:
        try:
            return EllipsoidRadii.parse(self.radii)
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e

    def edem_config(self) -> EdemConfig:
        return EdemConfig(
            radii=self.radii_value(),
            dt=self.dt,
            epsilon=self.epsilon,
            n_max=self.n_max,
            log_every=self.log_every,
        )

    def remesh_config(self) -> RemeshConfig:
        return RemeshConfig(
            method=self.method, target_vertices=self.target_vertices, seed=self.seed
        )

    def edeq_config(self) -> EdeqConfig:
        return EdeqConfig(
            radii=self.radii_value(),
            dt=self.dt,
            db=self.db,
            dc=self.dc,
            K=self.K,
            alpha=self.alpha,
            epsilon=self.epsilon,
            n_max=self.n_max,
            log_every=self.log_every,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["radii"] = list(self.radii_value().as_tuple())
        return data

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _check_positive(name, value):
    if not (isinstance(value, (int, float)) and value > 0):
        raise ConfigurationError(f"{name} must be positive, got {value!r}")


def _check_count(name, value):
    if not (isinstance(value, int) and value >= 1):
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")


def _check_population(spec: str):
    if spec in POPULATION_PRESETS:
        return
    kind, _, rest = spec.partition(":")
    if kind == "csv" and rest:
        return
    if kind in ("tworegion", "smooth") and rest.count(":") == 1:
        return
    raise ConfigurationError(
        f"population must be area, uniform, csv:<path>, tworegion:<axis>:<ratio> "
        f"or smooth:<axis>:<amplitude>; got {spec!r}"
    )


def default_epsilon(command: str, method: str) -> float:
    """EDEQ stops on relative energy change, which needs a tighter threshold."""
    if command == "edeq" or (command == "remesh" and method == "edeq"):
        return DEFAULT_EDEQ_EPSILON
    return DEFAULT_EDEM_EPSILON


def _settings_overrides() -> dict:
    if not settings.configured:
        return {}
    overrides = {}
    for key, name in SETTINGS_NAMES.items():
        value = getattr(settings, name, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _file_overrides(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys in config file: {', '.join(unknown)}")
    return data


def load_config(command: str, options: dict | None = None) -> RunConfig:
    """
    Build and validate the RunConfig for one command.

    Precedence (lowest to highest): defaults, Django settings EDEQMAP_*,
    the JSON file named by options["config"], explicit options. Options set
    to None count as not given.

    Optional settings:
    - EDEQMAP_DT, EDEQMAP_EPSILON, EDEQMAP_N_MAX: iteration controls
    - EDEQMAP_ALPHA, EDEQMAP_K, EDEQMAP_DB, EDEQMAP_DC: radius optimization
    - EDEQMAP_RADII: initial radii, "a,b,c" or "sphere"
    - EDEQMAP_POPULATION: population preset
    - EDEQMAP_REMESH_METHOD, EDEQMAP_TARGET_VERTICES, EDEQMAP_SEED: remeshing
    - EDEQMAP_LOG_EVERY: progress line interval
    - EDEQMAP_THREADS: worker cap (overridden by the EDEQ_THREADS env var)
    """
    options = dict(options or {})
    known = {f.name for f in fields(RunConfig)} - {"command"}

    values = {}
    values.update(_settings_overrides())
    if options.get("config"):
        values.update(_file_overrides(options["config"]))
    values.update(
        {key: value for key, value in options.items() if key in known and value is not None}
    )
    values.pop("command", None)

    method = values.get("method", RunConfig.method)
    values.setdefault("epsilon", default_epsilon(command, method))

    try:
        config = RunConfig(command=command, **values)
    except TypeError as e:
        raise ConfigurationError(str(e)) from e
    if isinstance(config.radii, str) or isinstance(config.radii, list):
        config.radii = config.radii_value().as_tuple()
    for name in ("input", "output", "param"):
        setattr(config, name, str(getattr(config, name)))

    config.validate()
    return config


def thread_limit() -> int:
    """Worker cap for parallel candidate evaluation."""
    raw = os.environ.get("EDEQ_THREADS")
    if raw is None and settings.configured:
        raw = getattr(settings, "EDEQMAP_THREADS", None)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"EDEQ_THREADS must be an integer, got {raw!r}") from e
    if value < 1:
        raise ConfigurationError(f"EDEQ_THREADS must be at least 1, got {value}")
    return value
