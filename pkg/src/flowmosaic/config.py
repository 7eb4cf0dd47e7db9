"""Run configuration: one JSON document, overridable field by field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Optional

from .analytics import DEFAULT_THRESHOLDS
from .errors import BadThresholds, ValidationError
from .flow import FlowParams
from .interp import AugmentationPlan, AugmentMode, PairScope
from .pipeline import RansacSettings

MODES = ("baseline", "synthetic", "hybrid")


@dataclass(frozen=True)
class SimulationConfig:
    field_width: int = 2304
    field_height: int = 1536
    meters_per_texel: float = 0.01
    image_size: int = 512
    altitude: float = 15.0
    front_overlap: float = 0.5
    side_overlap: float = 0.5
    noise_sigma: float = 2.0

    def __post_init__(self):
        for name in ("front_overlap", "side_overlap"):
            o = getattr(self, name)
            if not 0.0 <= o <= 0.95:
                raise ValidationError(f"simulation.{name}={o} outside [0, 0.95]")
        if self.altitude <= 0:
            raise ValidationError("simulation.altitude must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("simulation.noise_sigma must be >= 0")


@dataclass(frozen=True)
class AugmentConfig:
    n_intermediate: int = 3
    pair_scope: str = PairScope.WITHIN_LEG_ONLY.value
    tau: float = 2.0
    mode: str = "hybrid"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        PairScope(self.pair_scope)
        self.plan()

    def plan(self):
        return AugmentationPlan(self.n_intermediate, PairScope(self.pair_scope), self.tau)


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 5
    iterations_per_level: int = 50
    smoothness_weight: float = 15.0
    convergence_epsilon: float = 0.01
    global_init: bool = True
    backend: str = "internal"

    def params(self):
        return FlowParams(
            self.pyramid_levels, self.iterations_per_level, self.smoothness_weight, self.convergence_epsilon, self.global_init
        )


@dataclass(frozen=True)
class MosaicConfig:
    scale: Optional[float] = None
    max_features: int = 1000
    min_overlap: float = 0.2
    refine: bool = True
    ransac_threshold: float = 1.5
    ransac_max_iters: int = 2000
    ransac_confidence: float = 0.999

    def ransac(self, seed):
        return RansacSettings(self.ransac_threshold, self.ransac_max_iters, self.ransac_confidence, seed)


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple = (0,)
    overlap_sweep: tuple = (0.7,)
    write_outputs: bool = True


@dataclass(frozen=True)
class RunConfig:
    input: Optional[str] = None
    output: str = "out"
    seed: int = 0
    threads: int = 1
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    mosaic: MosaicConfig = field(default_factory=MosaicConfig)
    health_thresholds: tuple = DEFAULT_THRESHOLDS
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def __post_init__(self):
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        th = list(self.health_thresholds)
        if any(b <= a for a, b in zip(th, th[1:])) or any(not -1 <= t <= 1 for t in th):
            raise BadThresholds(f"thresholds must be strictly ascending within [-1, 1]: {th}")

    def to_dict(self):
        return _plain(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data or {})

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from exc

    def with_overrides(self, overrides):
        """Apply dotted-key overrides, e.g. ``{"simulation.front_overlap": 0.7}``."""
        data = self.to_dict()
        for key, value in overrides.items():
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ValidationError(f"unknown config section {p!r} in {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ValidationError(f"unknown config field {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)

    def variant(self, mode):
        """Same configuration with only the dataset composition changed."""
        return replace(self, augment=replace(self.augment, mode=mode))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data):
    if not isinstance(data, dict):
        raise ValidationError(f"{cls.__name__} expects an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} field(s): {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def augment_mode(mode):
    return None if mode == "baseline" else AugmentMode(mode)
