import json
import os
from typing import Literal

import click
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cachechain.errors import ConfigError
from cachechain.placement import STRATEGIES, PlacementTarget, capped_proportional, top_c
from cachechain.state_space import ContentCatalog, TruncationConfig
from cachechain.workload import ShotNoiseConfig


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CatalogSpec(_Spec):
    n_contents: int = Field(ge=1)
    popularity: list[float] | None = None
    zipf_s: float | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.popularity is None) == (self.zipf_s is None):
            raise ValueError("give exactly one of popularity or zipf_s")
        if self.popularity is not None and len(self.popularity) != self.n_contents:
            raise ValueError(f"popularity has {len(self.popularity)} entries, n_contents is {self.n_contents}")
        return self

    def build(self) -> ContentCatalog:
        if self.zipf_s is not None:
            return ContentCatalog.zipf(self.n_contents, self.zipf_s)
        return ContentCatalog(self.popularity)


class TargetSpec(_Spec):
    cache_size: int = Field(ge=1)
    probs: list[float] | None = None
    rule: Literal["capped_proportional", "top_c"] | None = None
    strategy: str = "min_support"
    ordering: list[int] | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.probs is None) == (self.rule is None):
            raise ValueError("give exactly one of probs or rule")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        return self

    def build(self, catalog: ContentCatalog) -> PlacementTarget:
        if self.cache_size > catalog.n_contents:
            raise ConfigError(f"Cache size {self.cache_size} exceeds {catalog.n_contents} contents")
        if self.rule == "capped_proportional":
            return capped_proportional(catalog, self.cache_size)
        if self.rule == "top_c":
            return top_c(catalog, self.cache_size)
        if len(self.probs) != catalog.n_contents:
            raise ConfigError(f"Target has {len(self.probs)} entries, catalog has {catalog.n_contents}")
        return PlacementTarget(self.probs, self.cache_size)


class TruncationSpec(_Spec):
    enabled: bool = False
    drop_zero_prob: bool = True
    pin_certain: bool = True
    top_k_states: int | None = Field(default=None, ge=1)

    @property
    def active(self) -> bool:
        return self.enabled or self.top_k_states is not None

    def build(self) -> TruncationConfig:
        return TruncationConfig(self.drop_zero_prob, self.pin_certain, self.top_k_states)


class PolicySpec(_Spec):
    eta: Literal["solver", "block_filling", "popularity_weighted"] = "solver"
    acceptance_factor: float = Field(default=1.0, gt=0, le=1)
    refine: bool = True
    truncation: TruncationSpec = Field(default_factory=TruncationSpec)
    mixing_trials: int = Field(default=1000, ge=0)
    mixing_threshold: float = Field(default=1e-3, gt=0)
    mixing_t_max: int = Field(default=100_000, ge=1)


class ShotNoiseSpec(_Spec):
    total_requests: float = Field(default=100_000.0, ge=0)
    arrival_window: tuple[float, float] = (0.0, 40.0)
    horizon: float = Field(default=100.0, gt=0)
    mean_lifetime: float = Field(default=32.7, gt=0)
    lifetime_spread: float = Field(default=0.5, ge=0, lt=1)
    decay_ratio: float = Field(default=0.5, gt=0)

    def build(self, zipf_s: float) -> ShotNoiseConfig:
        return ShotNoiseConfig(zipf_s=zipf_s, **self.model_dump())


class WorkloadSpec(_Spec):
    kind: Literal["static_zipf", "session", "shot_noise", "file"] = "static_zipf"
    n_requests: int = Field(default=0, ge=0)
    zipf_s: float | None = Field(default=None, ge=0)
    n_sessions: int = Field(default=50, ge=1)
    mode: Literal["random", "smooth"] = "random"
    concentration: float = Field(default=4.0, gt=0)
    amplitude: float = Field(default=0.7, ge=0, le=1)
    shot_noise: ShotNoiseSpec = Field(default_factory=ShotNoiseSpec)
    trace_path: str | None = None

    @model_validator(mode="after")
    def _trace_file(self):
        if self.kind == "file":
            if not self.trace_path:
                raise ValueError("kind 'file' needs trace_path")
            if not os.path.isfile(self.trace_path):
                raise ValueError(f"trace file not found: {self.trace_path}")
        return self


class SimulationSpec(_Spec):
    policies: list[Literal["proposed", "static", "lru", "lfu"]] = ["proposed", "static", "lru", "lfu"]
    n_runs: int = Field(default=1, ge=1)
    seed: int | None = Field(default=None, ge=0)
    window: int | None = Field(default=None, ge=1)
    state_window: int | None = Field(default=None, ge=1)
    checkpoint_every: int | None = Field(default=None, ge=1)


class OutputSpec(_Spec):
    directory: str = "out"


class ExperimentConfig(_Spec):
    name: str = "experiment"
    catalog: CatalogSpec
    target: TargetSpec
    policy: PolicySpec = Field(default_factory=PolicySpec)
    workload: WorkloadSpec = Field(default_factory=WorkloadSpec)
    simulation: SimulationSpec = Field(default_factory=SimulationSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @property
    def seed(self) -> int:
        if self.simulation.seed is None:
            raise ConfigError("No seed: set simulation.seed or pass --seed")
        return self.simulation.seed

    def effective(self) -> dict:
        """The config as hashed into output headers; the output location is not part of it."""
        return self.model_dump(mode="json", exclude={"output"})


def load_config(path: str) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})")
    return ExperimentConfig.model_validate(raw)


def apply_overrides(
    cfg: ExperimentConfig,
    seed: int | None = None,
    out: str | None = None,
    no_refine: bool = False,
    truncate_states: int | None = None,
) -> ExperimentConfig:
    data = cfg.model_dump()
    if seed is not None:
        data["simulation"]["seed"] = seed
    if out is not None:
        data["output"]["directory"] = out
    if no_refine:
        data["policy"]["refine"] = False
    if truncate_states is not None:
        data["policy"]["truncation"]["top_k_states"] = truncate_states
    return ExperimentConfig.model_validate(data)


def experiment_options(f):
    """--config plus the flags every experiment command accepts."""
    f = click.option("--progress", is_flag=True, help="Show progress bars.")(f)
    f = click.option("--truncate-states", type=int, default=None, help="Keep the K most popular states.")(f)
    f = click.option("--no-refine", is_flag=True, help="Skip the refinement pass.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--seed", type=click.IntRange(min=0), default=None, help="Master seed.")(f)
    f = click.option("--config", "config_path", type=click.Path(), required=True, help="Experiment JSON.")(f)
    return f


def resolve(config_path, seed, out, no_refine, truncate_states) -> ExperimentConfig:
    try:
        cfg = load_config(config_path)
        return apply_overrides(cfg, seed, out, no_refine, truncate_states)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {config_path}:\n{e}")
