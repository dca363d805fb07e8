"""End-to-end orchestration: templates, profiling, refinement, gap filling and run outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import pickle
import shutil
import threading
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .catalog import SchemaCatalog, introspect
from .config import ConfigError, RunConfig
from .db import connection_url
from .distribution import bin_index, build_target, wasserstein
from .forge import GenerationResult, export_templates, generate_templates, load_template_file
from .oracle import make_oracle
from .profiler import ProfileStore, default_budget, profile_all
from .providers import make_provider
from .refinery import refine
from .search import BudgetExhausted, fill_distribution
from .sqltext import TemplateParseError, parse_template

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.pkl"
_OUTPUTS = ("queries", "templates", "workload.sql", "manifest.json", "histogram.csv", "trace.jsonl",
            "profiles.jsonl", "refinement_audit.jsonl", "overshoot.jsonl", "rewrite_report.json")


class InvariantViolation(RuntimeError):
    pass


class NoTemplates(RuntimeError):
    pass


class MissingManifest(FileNotFoundError):
    pass


class Writer:
    """Serializes every file write of a run."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self.root.mkdir(parents=True, exist_ok=True)

    def text(self, rel: str, content: str) -> Path:
        p = self.root / rel
        with self._lock:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(content)
        return p

    def jsonl(self, rel: str, records) -> Path:
        return self.text(rel, "".join(json.dumps(r, sort_keys=True, default=str) + "\n" for r in records))

    def json(self, rel: str, doc) -> Path:
        return self.text(rel, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


# -- building blocks ---------------------------------------------------------------

def load_catalog(cfg: RunConfig) -> SchemaCatalog:
    src = cfg.catalog
    if src and src.startswith("builtin:"):
        name = src.split(":", 1)[1]
        try:
            text = resources.files("sqlshaper").joinpath(f"data/{name}_catalog.json").read_text()
        except FileNotFoundError as e:
            raise ConfigError(f"no built-in catalog named {name!r}") from e
        return SchemaCatalog.from_dict(json.loads(text))
    if src:
        if not Path(src).exists():
            raise ConfigError(f"catalog file {src} does not exist")
        return SchemaCatalog.load(src)
    if cfg.database:
        return introspect(connection_url(cfg.database))
    raise ConfigError("configure either a catalog file or a database connection")


def build_oracle(cfg: RunConfig, catalog: SchemaCatalog):
    block = dict(cfg.oracle)
    if block.get("kind") == "postgres_explain" and not (block.get("url") or block.get("host")):
        block.update(cfg.database)
    metric = cfg.benchmark.cost_type if cfg.benchmark else block.get("metric", "plan_cost")
    return make_oracle(block, catalog, metric)


def build_provider(cfg: RunConfig, catalog: SchemaCatalog):
    return make_provider(cfg.provider, catalog, cfg.seed)


def write_catalog(cfg: RunConfig, catalog: SchemaCatalog) -> Path:
    return Writer(cfg.output_dir).text("catalog.json", catalog.dumps())


def run_templates(cfg: RunConfig, catalog: SchemaCatalog, oracle, provider) -> GenerationResult:
    if not cfg.specs:
        raise ConfigError("no template specifications configured")
    c = cfg.constants
    res = generate_templates(cfg.specs, catalog, oracle, provider, int(c["rewrite_iterations"]),
                             int(c["attempts_per_spec"]), cfg.seed, cfg.parallelism)
    w = Writer(cfg.output_dir)
    export_templates(res, w.root / "templates")
    w.json("rewrite_report.json", rewrite_report(res, provider))
    return res


def rewrite_report(res: GenerationResult, provider) -> dict:
    return {
        "specs": len(res.outcomes),
        "verified": len(res.templates),
        "attempt_series": res.attempt_series(),
        "failures": dict(sorted(res.failures.items())),
        "outcomes": [{"spec": o.spec.id, "status": o.status,
                      "template": o.template.id if o.template else None,
                      "retries": len(o.traces), "error": o.error} for o in res.outcomes],
        "tokens": provider.token_report(),
    }


def seed_templates(cfg: RunConfig, catalog: SchemaCatalog, oracle, provider, writer: Writer):
    """Templates to start from: inline SQL, a template directory, or fresh generation."""
    if cfg.seed_templates:
        try:
            return [parse_template(s, catalog, f"T{i + 1}") for i, s in enumerate(cfg.seed_templates)], None
        except TemplateParseError as e:
            raise ConfigError(f"bad seed template: {e}") from e
    if cfg.templates_dir:
        files = sorted(Path(cfg.templates_dir).glob("*.sql"))
        if not files:
            raise ConfigError(f"no .sql files in {cfg.templates_dir}")
        return [load_template_file(f, catalog) for f in files], None
    res = run_templates(cfg, catalog, oracle, provider)
    return list(res.templates), res


# -- generate ---------------------------------------------------------------------

def _fresh_outputs(root: Path):
    for name in _OUTPUTS + (CHECKPOINT,):
        p = root / name
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()


def _save_checkpoint(root: Path, ck: dict):
    tmp = root / (CHECKPOINT + ".tmp")
    with tmp.open("wb") as fh:
        pickle.dump(ck, fh)
    tmp.replace(root / CHECKPOINT)


def load_checkpoint(root: Path, run_id: str) -> dict | None:
    p = Path(root) / CHECKPOINT
    if not p.exists():
        return None
    with p.open("rb") as fh:
        ck = pickle.load(fh)
    if ck.get("run_id") != run_id:
        log.warning("checkpoint belongs to run %s, not %s; starting over", ck.get("run_id"), run_id)
        return None
    return ck


def run_generate(cfg: RunConfig, catalog: SchemaCatalog | None = None, oracle=None, provider=None,
                 resume: bool = False, clock=time.time) -> dict:
    """Run the full pipeline and write the workload directory. Returns the manifest."""
    if cfg.benchmark is None:
        raise ConfigError("generate needs a benchmark block")
    root = Path(cfg.output_dir)
    ck = load_checkpoint(root, cfg.run_id) if resume else None
    if ck is None:
        _fresh_outputs(root)
    writer = Writer(root)
    started = clock()
    deadline = started + 60 * cfg.budget_minutes if cfg.budget_minutes else None
    catalog = catalog or load_catalog(cfg)
    oracle = oracle or build_oracle(cfg, catalog)
    provider = provider or build_provider(cfg, catalog)
    store = ProfileStore(root / "profiles.jsonl", clock)
    target = build_target(cfg.benchmark)
    c = cfg.constants

    if ck is None:
        ck = {"run_id": cfg.run_id, "stage": None, "rng": np.random.default_rng(cfg.seed),
              "timing": {}, "tokens": None, "audit": [], "gen": None}
    timing = ck["timing"]
    status = "complete"

    def mark(stage, t0):
        timing[stage] = timing.get(stage, 0.0) + round(clock() - t0, 6)
        ck["stage"] = stage
        ck["tokens"] = provider.token_report()
        _save_checkpoint(root, ck)

    def over():
        return deadline is not None and clock() >= deadline

    rng = ck["rng"]
    if ck["stage"] is None:
        t0 = clock()
        templates, gen = seed_templates(cfg, catalog, oracle, provider, writer)
        if not templates:
            raise NoTemplates("no verified templates to work with")
        ck["templates"] = templates
        ck["gen"] = rewrite_report(gen, provider) if gen is not None else None
        mark("templates", t0)

    if ck["stage"] == "templates" and not over():
        t0 = clock()
        budget = default_budget(cfg.benchmark.num_queries, len(ck["templates"]),
                                float(c["profile_fraction"]), int(c["profile_min"]))
        ck["profile_budget"] = budget
        ck["profiles"] = profile_all(ck["templates"], oracle, budget, rng, store, cfg.parallelism)
        mark("profile", t0)

    if ck["stage"] == "profile" and not over():
        t0 = clock()
        if not cfg.no_refine:
            rr = refine(ck["templates"], ck["profiles"], target, provider, oracle, rng, catalog,
                        ck["profile_budget"], cfg.phases(), store, int(c["history_cap"]))
            ck["templates"], ck["profiles"], ck["audit"] = rr.templates, rr.profiles, rr.audit
        mark("refine", t0)

    if ck["stage"] in ("refine", "fill") and not over():
        t0 = clock()

        def on_checkpoint(state):
            ck["state"] = state
            ck["stage"] = "fill"
            _save_checkpoint(root, ck)

        try:
            state = fill_distribution(ck["templates"], ck["profiles"], target, oracle, rng,
                                      cfg.search_params(), ck.get("state"), deadline, on_checkpoint,
                                      clock, store)
            ck["stage"] = "done"
        except BudgetExhausted as e:
            state = e.args[0]
            status = "incomplete"
        ck["state"] = state
        timing["fill"] = timing.get("fill", 0.0) + round(clock() - t0, 6)
        _save_checkpoint(root, ck)
    if ck["stage"] != "done":
        status = "incomplete"

    timing["total"] = round(clock() - started, 6)
    manifest = write_outputs(cfg, writer, ck, target, provider, oracle, status)
    if status == "complete":
        (root / CHECKPOINT).unlink(missing_ok=True)
    return manifest


def _query_file(i: int) -> str:
    return f"queries/q{i + 1:05d}.sql"


def write_outputs(cfg: RunConfig, writer: Writer, ck: dict, target, provider, oracle, status) -> dict:
    from .search import seed_state
    state = ck.get("state")
    templates = ck.get("templates", [])
    if state is None:
        state = seed_state(templates, ck.get("profiles", {}), target, oracle.metric)
    intervals = target.intervals
    achieved = state.current.counts
    queries = state.queries
    check_invariants(queries, achieved, target)

    shutil.rmtree(writer.root / "queries", ignore_errors=True)
    records, workload = [], []
    for i, (q, j) in enumerate(queries):
        f = _query_file(i)
        writer.text(f, f"-- template: {q.template_id}\n-- cost: {q.cost.value!r}\n-- bin: {j}\n"
                       f"{q.sql_text};\n")
        workload.append(q.sql_text + ";\n")
        records.append({"file": f, "template_id": q.template_id,
                        "bindings": {k: _plain(v) for k, v in q.bindings.items()},
                        "cost": q.cost.value, "bin": j})
    writer.text("workload.sql", "".join(workload))

    for t in templates:
        head = f"-- template: {t.id}\n-- spec: {t.spec_id}\n"
        head += f"-- status: refined\n-- parent: {t.lineage}\n" if t.lineage else "-- status: verified\n"
        writer.text(f"templates/{t.id}.sql", head + t.sql_text + ";\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "target", "achieved"])
    for j in range(intervals.n):
        lo, hi = intervals.bounds(j)
        w.writerow([repr(float(lo)), repr(float(hi)), int(target.counts[j]), int(achieved[j])])
    writer.text("histogram.csv", buf.getvalue())
    writer.jsonl("trace.jsonl", state.trace)
    writer.jsonl("refinement_audit.jsonl", ck.get("audit", []))
    writer.jsonl("overshoot.jsonl", [{"template_id": q.template_id, "sql": q.sql_text,
                                      "cost": q.cost.value, "bin": j} for q, j in state.overshoot])
    if ck.get("gen") is not None:
        writer.json("rewrite_report.json", ck["gen"])

    distance = wasserstein(state.current, target)
    unmet = [j for j in range(intervals.n) if achieved[j] < target.counts[j]]
    manifest = {
        "run_id": cfg.run_id,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "status": status,
        "benchmark": {"name": cfg.benchmark.name, "cost_type": cfg.benchmark.cost_type,
                      "num_queries": cfg.benchmark.num_queries,
                      "num_intervals": cfg.benchmark.num_intervals},
        "ablation": {"no_refine": cfg.no_refine, "naive_search": cfg.naive_search},
        "histogram": {"edges": [float(e) for e in intervals.edges],
                      "target": [int(x) for x in target.counts],
                      "achieved": [int(x) for x in achieved]},
        "distance": distance,
        "unmet_bins": unmet,
        "skipped_bins": sorted(int(j) for j in state.skip),
        "templates": [{"id": t.id, "spec_id": t.spec_id, "parent": t.lineage} for t in templates],
        "queries": records,
        "search": {"bo_runs": state.bo_runs, "evaluations": state.evaluations,
                   "bad_combinations": sorted([int(j), t] for j, t in state.bad),
                   "overshoot": len(state.overshoot)},
        "oracle_evaluations": oracle.evaluations,
        "tokens": provider.token_report(),
        "timing": dict(ck.get("timing", {})),
    }
    writer.json("manifest.json", manifest)
    return manifest


def _plain(v):
    if hasattr(v, "isoformat"):
        return v.isoformat()
    if hasattr(v, "item"):
        return v.item()
    return v


def check_invariants(queries, achieved, target):
    counts = np.zeros(target.intervals.n, dtype=np.int64)
    for q, j in queries:
        if bin_index(target.intervals, q.cost.value) != j:
            raise InvariantViolation(f"query cost {q.cost.value} recorded in the wrong bin {j}")
        counts[j] += 1
    if not np.array_equal(counts, achieved):
        raise InvariantViolation("workload counts disagree with the achieved histogram")
    if np.any(counts > target.counts):
        raise InvariantViolation("workload overfills a bin")


# -- report -----------------------------------------------------------------------

def report(manifest_path: str | Path) -> str:
    p = Path(manifest_path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise MissingManifest(f"no manifest at {p}")
    m = json.loads(p.read_text())
    h = m["histogram"]
    lines = [f"run {m['run_id']}  status: {m['status']}",
             f"wasserstein distance: {m['distance']:.6g}",
             f"queries: {len(m['queries'])} of {sum(h['target'])}",
             "", "bin                         target  achieved  fill"]
    for j, (t, a) in enumerate(zip(h["target"], h["achieved"])):
        lo, hi = h["edges"][j], h["edges"][j + 1]
        fill = a / t if t else 1.0
        flag = "  UNMET" if a < t else ""
        if j in m.get("skipped_bins", []) and a < t:
            flag += " (skipped)"
        lines.append(f"[{lo:>10.6g}, {hi:>10.6g})  {t:>7d}  {a:>8d}  {fill:6.1%}{flag}")
    tok = m.get("tokens", {})
    lines += ["", f"provider calls: {tok.get('calls', 0)}  prompt tokens: {tok.get('prompt_tokens', 0)}  "
                  f"completion tokens: {tok.get('completion_tokens', 0)}  total: {tok.get('total_tokens', 0)}"]
    for op, n in (tok.get("by_operation") or {}).items():
        lines.append(f"  {op}: {n}")
    s = m.get("search", {})
    lines += ["", f"oracle evaluations: {m.get('oracle_evaluations', 0)}  BO runs: {s.get('bo_runs', 0)}"]
    lines += ["", "timing (seconds):"]
    for stage in ("templates", "profile", "refine", "fill", "total"):
        if stage in m.get("timing", {}):
            lines.append(f"  {stage}: {m['timing'][stage]:.3f}")
    return "\n".join(lines) + "\n"
