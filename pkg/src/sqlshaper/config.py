"""Run configuration: a YAML document with every algorithm constant as an overridable key."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .distribution import BadSpec, BenchmarkSpec
from .model import ModelError, TemplateSpec
from .refinery import RefinementPhase
from .search import SearchParams


class ConfigError(ValueError):
    pass


DEFAULT_CONSTANTS = {
    # template generation
    "rewrite_iterations": 5,
    "attempts_per_spec": 3,
    # profiling
    "profile_fraction": 0.15,
    "profile_min": 10,
    # refinement phases: (tau, k, m, use_history)
    "phases": [
        {"tau": 0.2, "k": 3, "m": 3, "use_history": False},
        {"tau": 0.1, "k": 5, "m": 5, "use_history": True},
    ],
    "history_cap": 5,
    # gap filling
    "budget_factor": 5,
    "utility_threshold": 0.05,
    "max_failures": 5,
    "sample_size": 10,
    "min_variety": 0.1,
    "warm_start_top": 10,
    "trees": 50,
    "random_candidates": 500,
    "local_candidates": 50,
    "early_stop": True,
    "checkpoint_every": 50,
    "max_evaluations": None,
}


@dataclass
class RunConfig:
    seed: int
    output_dir: Path
    benchmark: BenchmarkSpec | None = None
    database: dict = field(default_factory=dict)
    catalog: str | None = None
    oracle: dict = field(default_factory=lambda: {"kind": "synthetic", "function": "identity"})
    provider: dict = field(default_factory=lambda: {"kind": "mock"})
    specs: list[TemplateSpec] = field(default_factory=list)
    seed_templates: list[str] = field(default_factory=list)
    templates_dir: Path | None = None
    no_refine: bool = False
    naive_search: bool = False
    parallelism: int = 1
    budget_minutes: float | None = None
    constants: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONSTANTS))
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    # -- derived ------------------------------------------------------------
    @property
    def config_hash(self) -> str:
        doc = {k: v for k, v in self.raw.items() if k not in ("output_dir", "budget_minutes")}
        doc["seed"] = self.seed
        doc["no_refine"] = self.no_refine
        doc["naive_search"] = self.naive_search
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.config_hash[:12]

    def phases(self) -> tuple[RefinementPhase, ...]:
        try:
            return tuple(RefinementPhase(float(p["tau"]), int(p["k"]), int(p["m"]),
                                         bool(p.get("use_history", False)))
                         for p in self.constants["phases"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad refinement phases: {e}") from e

    def search_params(self) -> SearchParams:
        c = self.constants
        return SearchParams(
            budget_factor=int(c["budget_factor"]), utility_threshold=float(c["utility_threshold"]),
            max_failures=int(c["max_failures"]), sample_size=int(c["sample_size"]),
            min_variety=float(c["min_variety"]), warm_start_top=int(c["warm_start_top"]),
            n_trees=int(c["trees"]), n_random=int(c["random_candidates"]),
            n_local=int(c["local_candidates"]), early_stop=bool(c["early_stop"]),
            naive=self.naive_search, checkpoint_every=int(c["checkpoint_every"]),
            max_evaluations=None if c["max_evaluations"] is None else int(c["max_evaluations"]))


def _resolve(base: Path, p):
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else base / p


def load_specs(src, base_dir: Path) -> list[TemplateSpec]:
    if isinstance(src, (str, Path)):
        path = _resolve(base_dir, src)
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read spec file {path}: {e}") from e
        if isinstance(doc, dict):
            doc = doc.get("specs", [])
        src = doc
    if not src:
        raise BadSpec("no template specifications given")
    try:
        return [TemplateSpec.from_dict(d, default_id=f"s{i + 1}") for i, d in enumerate(src)]
    except (ModelError, TypeError, AttributeError) as e:
        raise BadSpec(str(e)) from e


def from_dict(doc: dict, base_dir: str | Path = ".", overrides: dict | None = None) -> RunConfig:
    doc = copy.deepcopy(doc or {})
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    base = Path(base_dir)
    if "seed" not in doc or doc["seed"] is None:
        raise ConfigError("a seed is required")
    try:
        seed = int(doc["seed"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"seed must be an integer: {e}") from e
    constants = copy.deepcopy(DEFAULT_CONSTANTS)
    unknown = set(doc.get("constants") or {}) - set(constants)
    if unknown:
        raise ConfigError(f"unknown constants: {sorted(unknown)}")
    constants.update(doc.get("constants") or {})
    bench = None
    if doc.get("benchmark"):
        bench = BenchmarkSpec.from_dict(doc["benchmark"], base)
    specs = []
    if doc.get("specs") is not None:
        specs = load_specs(doc["specs"], base)
    ablation = doc.get("ablation") or {}
    budget = doc.get("budget_minutes")
    cfg = RunConfig(
        seed=seed,
        output_dir=_resolve(base, doc.get("output_dir", "out")),
        benchmark=bench,
        database=dict(doc.get("database") or {}),
        catalog=doc.get("catalog"),
        oracle=dict(doc.get("oracle") or {"kind": "synthetic", "function": "identity"}),
        provider=dict(doc.get("provider") or {"kind": "mock"}),
        specs=specs,
        seed_templates=list(doc.get("seed_templates") or []),
        templates_dir=_resolve(base, doc.get("templates_dir")),
        no_refine=bool(ablation.get("no_refine", doc.get("no_refine", False))),
        naive_search=bool(ablation.get("naive_search", doc.get("naive_search", False))),
        parallelism=int(doc.get("parallelism", 1)),
        budget_minutes=float(budget) if budget is not None else None,
        constants=constants,
        raw=doc,
        base_dir=base,
    )
    if cfg.catalog and not str(cfg.catalog).startswith("builtin:"):
        cfg.catalog = str(_resolve(base, cfg.catalog))
    if cfg.provider.get("cache_dir"):
        cfg.provider["cache_dir"] = str(_resolve(base, cfg.provider["cache_dir"]))
    cfg.phases()
    return cfg


def load(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return from_dict(doc, path.parent, overrides)
