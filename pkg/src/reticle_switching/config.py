"""Scenario configuration: one JSON document, strictly validated."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .harness import STRATEGIES
from .plant import PlantConfig
from .predictor import Scheduler


class ConfigError(ValueError):
    pass


def _check_keys(section: str, data: dict, cls) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)} (allowed: {sorted(known)})")


def _build(section: str, cls, data):
    _check_keys(section, data or {}, cls)
    try:
        return cls(**(data or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass(frozen=True)
class ImageAreaConfig:
    preset: str | None = "full"
    x_min: float | None = None
    x_max: float | None = None
    y_min: float | None = None
    y_max: float | None = None
    exposure_power: float = 1.0

    def __post_init__(self):
        explicit = [self.x_min, self.x_max, self.y_min, self.y_max]
        if self.preset is None:
            if any(v is None for v in explicit):
                raise ValueError("without a preset, x_min/x_max/y_min/y_max are all required")
        elif self.preset not in ("full", "small"):
            raise ValueError(f"preset must be 'full' or 'small', got {self.preset!r}")
        elif any(v is not None for v in explicit):
            raise ValueError("give either a preset or explicit bounds, not both")
        if self.exposure_power < 0:
            raise ValueError("exposure_power must be >= 0")


@dataclass(frozen=True)
class LayoutConfig:
    n_per_row: int = 4
    n_per_edge: int = 3

    def __post_init__(self):
        if self.n_per_row < 1 or self.n_per_edge < 0:
            raise ValueError("n_per_row must be >= 1 and n_per_edge >= 0")


@dataclass(frozen=True)
class LotPlanConfig:
    n_lots: int = 2
    wafers_per_lot: int = 16
    wafer_expose_time: float = 10.0
    wafer_swap_time: float = 2.26
    lot_swap_time: float = 120.0
    edge_mark_time: float = 0.3
    dt: float = 0.5

    def __post_init__(self):
        if self.n_lots < 1 or self.wafers_per_lot < 1:
            raise ValueError("n_lots and wafers_per_lot must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("wafer_expose_time", "wafer_swap_time", "lot_swap_time", "edge_mark_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.wafer_expose_time < self.dt:
            raise ValueError("wafer_expose_time must cover at least one time step")


@dataclass(frozen=True)
class SchedulerConfig:
    rules: tuple = (
        {"when": {"clamped": False}, "regime": 1},
        {"when": {"reclamped": True}, "regime": 2},
    )
    dwell_min: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(dict(r) for r in self.rules))
        if self.dwell_min < 0:
            raise ValueError("dwell_min must be >= 0")


@dataclass(frozen=True)
class ReductionConfig:
    s0: float = 0.0
    k: int = 3
    surrogate_k: int = 8

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.surrogate_k < self.k:
            raise ValueError("surrogate_k must be >= k")


@dataclass(frozen=True)
class FeedbackConfig:
    rho: float = 1.05
    lam: float = 1e-6

    def __post_init__(self):
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if not self.lam > 0:
            raise ValueError("lam must be positive")


@dataclass(frozen=True)
class UncertaintyConfig:
    reclamp_factor: float = 0.5
    reclamp_pellicle: bool = False
    delta_inflation: float = 1.0

    def __post_init__(self):
        if self.reclamp_factor < 0:
            raise ValueError("reclamp_factor must be >= 0")
        if not self.delta_inflation > 0:
            raise ValueError("delta_inflation must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    image_area: ImageAreaConfig = field(default_factory=ImageAreaConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    lotplan: LotPlanConfig = field(default_factory=LotPlanConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    regimes: tuple = (0, 1, 2)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    strategies: tuple = ("status_quo", "proposed", "linear_only")
    noise_std: float = 0.1
    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        regimes = tuple(int(r) for r in self.regimes)
        if len(set(regimes)) != len(regimes):
            raise ConfigError(f"duplicate regime ids in {list(regimes)}")
        if 0 not in regimes:
            raise ConfigError("regime 0 (nominal) must be configured")
        if any(r < 0 for r in regimes):
            raise ConfigError("regime ids must be >= 0")
        object.__setattr__(self, "regimes", regimes)
        try:
            Scheduler.from_config(self.scheduler.rules, self.scheduler.dwell_min)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scheduler: {exc}") from exc
        targets = {int(r["regime"]) for r in self.scheduler.rules}
        missing = sorted(targets - set(regimes))
        if missing:
            raise ConfigError(f"scheduler rules select regimes {missing} that are not configured")

        strategies = tuple(self.strategies)
        bad = sorted(set(strategies) - set(STRATEGIES))
        if bad:
            raise ConfigError(f"unknown strategies {bad}; choose from {list(STRATEGIES)}")
        if len(set(strategies)) != len(strategies) or len(strategies) < 2:
            raise ConfigError("strategies must be at least two distinct names")
        object.__setattr__(self, "strategies", strategies)
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        _check_keys("config", data, cls)
        sub = {
            "plant": PlantConfig,
            "image_area": ImageAreaConfig,
            "layout": LayoutConfig,
            "lotplan": LotPlanConfig,
            "scheduler": SchedulerConfig,
            "reduction": ReductionConfig,
            "feedback": FeedbackConfig,
            "uncertainty": UncertaintyConfig,
        }
        kwargs = {}
        for key, value in data.items():
            if key in sub:
                kwargs[key] = _build(key, sub[key], value)
            else:
                kwargs[key] = tuple(value) if isinstance(value, list) else value
        if "scheduler" in kwargs:
            for i, rule in enumerate(kwargs["scheduler"].rules):
                if set(rule) - {"when", "regime"} or "regime" not in rule:
                    raise ConfigError(f"scheduler.rules[{i}]: expected keys 'when' and 'regime'")
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheduler"]["rules"] = [dict(r) for r in self.scheduler.rules]
        d["regimes"] = list(self.regimes)
        d["strategies"] = list(self.strategies)
        return d

    def with_overrides(self, **kw) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(kw)
        return ScenarioConfig.from_dict(d)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, excluding seed and output location."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def model_hash(self) -> str:
        """Hash of the sections that determine the reduced model family."""
        d = self.to_dict()
        keep = {k: d[k] for k in ("plant", "image_area", "layout", "regimes", "reduction", "feedback")}
        keep["uncertainty"] = {k: d["uncertainty"][k] for k in ("reclamp_factor", "reclamp_pellicle")}
        blob = json.dumps(keep, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
