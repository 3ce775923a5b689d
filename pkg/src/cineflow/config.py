"""Experiment configuration: nested dataclasses with a YAML round trip."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .objective import ModelParams
from .simdata import NoiseSpec, PhantomSpec
from .solver import SolverParams

MODELS = ("fw", "dt", "of", "cheat-of")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VelocitySpec:
    pattern: str = "cardiac"
    speed: float = 0.5
    rng_seed: int = 1
    substeps: int = 1


@dataclass(frozen=True)
class CoilSpec:
    nc: int = 8
    width: float = 0.9
    rng_seed: int = 2


@dataclass(frozen=True)
class MaskSpec:
    accel: str = "four_x"
    central_frac: float = 0.15
    rng_seed: int = 3


@dataclass(frozen=True)
class DynamicMaskSpec:
    tau: float = 0.2
    dilate_px: int = 3


@dataclass(frozen=True)
class SweepRange:
    low: float
    high: float
    log: bool = True


def _default_ranges():
    return {
        "alpha1": SweepRange(1e-3, 1e-1),
        "alpha2": SweepRange(1e-4, 1e-2),
        "alpha3": SweepRange(1e-2, 1.0),
        "eps1": SweepRange(1e-3, 1e-1),
        "eps2": SweepRange(1e-3, 1e-1),
        "eps3": SweepRange(1e-3, 1e-1),
        "sigma": SweepRange(0.0, 3.0, log=False),
    }


@dataclass(frozen=True)
class SweepSpec:
    budget: int = 20
    rng_seed: int = 5
    ranges: dict = field(default_factory=_default_ranges)


@dataclass(frozen=True)
class EvalSpec:
    frames: tuple = (0, 4)
    profile_row: int = 24


def _default_models():
    return {
        "fw": ModelParams(alpha1=0.02, eps1=0.003),
        "dt": ModelParams(alpha1=0.005, alpha3=0.1, eps1=0.01, eps3=0.03),
        "of": ModelParams(alpha1=0.005, alpha2=0.001, alpha3=0.3, eps1=0.01, eps2=0.01, eps3=0.01),
        "cheat-of": ModelParams(alpha1=0.005, alpha3=0.3, eps1=0.01, eps3=0.01),
    }


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    velocity: VelocitySpec = field(default_factory=VelocitySpec)
    coils: CoilSpec = field(default_factory=CoilSpec)
    mask: MaskSpec = field(default_factory=MaskSpec)
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(eta=0.01, rng_seed=4))
    dynamic_mask: DynamicMaskSpec = field(default_factory=DynamicMaskSpec)
    models: dict = field(default_factory=_default_models)
    solver: SolverParams = field(default_factory=lambda: SolverParams(sigma=2.0, n_outer=30, n_rho=200, n_v=400))
    sweep: SweepSpec = field(default_factory=SweepSpec)
    evaluate: EvalSpec = field(default_factory=EvalSpec)
    output_dir: str = "runs/default"

    def model_params(self, model):
        try:
            return self.models[model]
        except KeyError:
            raise ConfigError(f"no parameters configured for model {model!r}") from None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Re-derive every component seed from one base seed."""
        r = dataclasses.replace
        return r(
            self,
            phantom=r(self.phantom, rng_seed=seed),
            velocity=r(self.velocity, rng_seed=seed + 1),
            coils=r(self.coils, rng_seed=seed + 2),
            mask=r(self.mask, rng_seed=seed + 3),
            noise=r(self.noise, rng_seed=seed + 4),
            sweep=r(self.sweep, rng_seed=seed + 5),
        )


def to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["evaluate"]["frames"] = list(cfg.evaluate.frames)
    return d


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    d = dict(d)
    base = ExperimentConfig()
    kw = {}
    simple = {
        "phantom": PhantomSpec, "velocity": VelocitySpec, "coils": CoilSpec, "mask": MaskSpec,
        "noise": NoiseSpec, "dynamic_mask": DynamicMaskSpec, "solver": SolverParams,
    }
    for key, cls in simple.items():
        if key in d:
            given = d.pop(key) or {}
            if not isinstance(given, dict):
                raise ConfigError(f"{key}: expected a mapping, got {type(given).__name__}")
            kw[key] = _build(cls, {**dataclasses.asdict(getattr(base, key)), **given}, key)
    if "models" in d:
        models = dict(base.models)
        given = d.pop("models") or {}
        if not isinstance(given, dict):
            raise ConfigError("models: expected a mapping")
        for name, params in given.items():
            if name not in MODELS:
                raise ConfigError(f"models: unknown model {name!r}")
            models[name] = _build(ModelParams, params or {}, f"models.{name}")
        kw["models"] = models
    if "sweep" in d:
        sw = d.pop("sweep") or {}
        if not isinstance(sw, dict):
            raise ConfigError("sweep: expected a mapping")
        sw = dict(sw)
        ranges = dict(base.sweep.ranges)
        for name, rg in (sw.pop("ranges", None) or {}).items():
            ranges[name] = _build(SweepRange, rg, f"sweep.ranges.{name}")
        kw["sweep"] = _build(SweepSpec, {"budget": base.sweep.budget, "rng_seed": base.sweep.rng_seed,
                                         **sw, "ranges": ranges}, "sweep")
    if "evaluate" in d:
        ev = d.pop("evaluate") or {}
        if not isinstance(ev, dict):
            raise ConfigError("evaluate: expected a mapping")
        ev = {**dataclasses.asdict(base.evaluate), **ev}
        try:
            ev["frames"] = tuple(int(f) for f in ev["frames"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"evaluate.frames: {exc}") from exc
        kw["evaluate"] = _build(EvalSpec, ev, "evaluate")
    if "output_dir" in d:
        kw["output_dir"] = str(d.pop("output_dir"))
    if d:
        raise ConfigError(f"unknown top-level keys {sorted(d)}")
    return dataclasses.replace(base, **kw)


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(data or {})


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def save(cfg: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
