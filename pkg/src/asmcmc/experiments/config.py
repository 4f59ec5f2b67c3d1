"""Experiment configuration: nested dataclasses with a YAML round trip."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..models import MODEL_CLASSES, TEMPERING_MODES
from ..samplers import ALGORITHMS


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ModelSpec:
    name: str = "plane"
    params: dict = field(default_factory=dict)
    n_data: int = 100
    data_seed: int = 0
    data_path: str = None
    num_stages: int = 6
    tempering: str = "data"


@dataclass
class SubspaceSpec:
    """Where the active/inactive split comes from.

    ``active_dim=None`` selects the dimension from the ESS curve; a
    ``split_path`` loads a precomputed split instead of estimating one.
    """

    active_dim: int = None
    n_gradient_samples: int = 10_000
    seed: int = 0
    split_path: str = None
    ess_inactive: int = 10_000
    ess_threshold: float = 50.0
    gap_threshold: float = 10.0


@dataclass
class TuningSpec:
    """Proposal tuning and chain initialisation.

    ``covariance`` is ``pilot`` (adaptive MH pilot run) or ``reference``
    (exact posterior covariance where one is available). ``scale``
    multiplies every tuned random-walk covariance.
    """

    covariance: str = "pilot"
    pilot_steps: int = 10_000
    pilot_burn_in: float = 0.2
    pilot_seed: int = 0
    scale: float = 1.0
    init: str = "pilot"


@dataclass
class AlgorithmSpec:
    """One sampler and its settings.

    ``iterations=None`` derives the iteration count from the budget.
    """

    name: str
    iterations: int = None
    n_inactive: int = 10
    n_particles: int = 10
    n_moves: int = 1
    resample_threshold: float = 0.5
    estimator: str = "single"


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    model: ModelSpec = field(default_factory=ModelSpec)
    subspace: SubspaceSpec = field(default_factory=SubspaceSpec)
    tuning: TuningSpec = field(default_factory=TuningSpec)
    algorithms: list = field(default_factory=list)
    budget: int = 100_000
    budget_tolerance: float = 0.05
    seed: int = 0
    replicates: int = 1
    burn_in: float = 0.1
    reference: str = "auto"
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = _build(ModelSpec, self.model, "model")
        if isinstance(self.subspace, dict):
            self.subspace = _build(SubspaceSpec, self.subspace, "subspace")
        if isinstance(self.tuning, dict):
            self.tuning = _build(TuningSpec, self.tuning, "tuning")
        self.algorithms = [
            a if isinstance(a, AlgorithmSpec) else _build(AlgorithmSpec, a, f"algorithms[{k}]")
            for k, a in enumerate(self.algorithms)
        ]

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a mapping")
        cfg = _build(cls, data, "<root>")
        validate(cfg)
        return cfg

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"unparseable YAML: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        return cls.from_yaml(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_yaml())

    def digest(self):
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(where, "expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}", "unknown field")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(where, str(exc)) from None


def _require(cond, name, message):
    if not cond:
        raise ConfigError(name, message)


def validate(cfg):
    """Check field values; raises :class:`ConfigError` naming the first bad field."""
    m = cfg.model
    _require(m.name in MODEL_CLASSES, "model.name", f"unknown model {m.name!r}")
    _require(isinstance(m.params, dict), "model.params", "expected a mapping")
    _require(m.n_data >= 1, "model.n_data", "must be positive")
    _require(m.num_stages >= 1, "model.num_stages", "must be positive")
    _require(m.tempering in TEMPERING_MODES, "model.tempering", f"must be one of {TEMPERING_MODES}")
    s = cfg.subspace
    _require(s.active_dim is None or s.active_dim >= 1, "subspace.active_dim", "must be >= 1")
    _require(s.n_gradient_samples >= 1, "subspace.n_gradient_samples", "must be positive")
    _require(s.ess_inactive >= 1, "subspace.ess_inactive", "must be positive")
    t = cfg.tuning
    _require(t.covariance in ("pilot", "reference"), "tuning.covariance", "must be 'pilot' or 'reference'")
    _require(t.init in ("pilot", "prior"), "tuning.init", "must be 'pilot' or 'prior'")
    _require(t.pilot_steps >= 10, "tuning.pilot_steps", "must be at least 10")
    _require(0 <= t.pilot_burn_in < 1, "tuning.pilot_burn_in", "must lie in [0, 1)")
    _require(t.scale > 0, "tuning.scale", "must be positive")
    _require(len(cfg.algorithms) > 0, "algorithms", "at least one algorithm is required")
    names = [a.name for a in cfg.algorithms]
    _require(len(set(names)) == len(names), "algorithms", "algorithm names must be unique")
    for k, a in enumerate(cfg.algorithms):
        where = f"algorithms[{k}]"
        _require(a.name in ALGORITHMS, f"{where}.name", f"unknown algorithm {a.name!r}")
        _require(a.iterations is None or a.iterations >= 1, f"{where}.iterations", "must be positive")
        _require(a.n_inactive >= 1, f"{where}.n_inactive", "must be positive")
        _require(a.n_particles >= (2 if a.name == "as_mwpg" else 1), f"{where}.n_particles",
                 "too few particles")
        _require(a.n_moves >= 0, f"{where}.n_moves", "must be non-negative")
        _require(0 <= a.resample_threshold <= 1, f"{where}.resample_threshold", "must lie in [0, 1]")
        _require(a.estimator in ("single", "weighted"), f"{where}.estimator",
                 "must be 'single' or 'weighted'")
        _require(a.estimator == "single" or a.name not in ("mh", "as_mwg"), f"{where}.estimator",
                 f"{a.name} has no weighted particle sets")
    _require(cfg.budget >= 1, "budget", "must be positive")
    _require(cfg.budget_tolerance >= 0, "budget_tolerance", "must be non-negative")
    _require(cfg.replicates >= 1, "replicates", "must be positive")
    _require(0 <= cfg.burn_in < 1, "burn_in", "must lie in [0, 1)")
    _require(cfg.reference in ("auto", "conjugate", "quadrature", "mh", "none"), "reference",
             "unknown reference method")
    _require(cfg.workers >= 1, "workers", "must be positive")
    return cfg
