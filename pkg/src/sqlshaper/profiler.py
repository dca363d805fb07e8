"""Template profiling with Latin hypercube samples of the placeholder space."""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import SqlTemplate, ValueDomain, instantiate, render_literal
from .oracle import OracleUnavailable, QueryFailed

log = logging.getLogger(__name__)

# Saturation ceiling for search-space sizes.
SPACE_CEILING = 2**62

PROFILE_FRACTION = 0.15
MIN_PROFILE_BUDGET = 10


class EmptyDomain(ValueError):
    pass


@dataclass
class ProfileRecord:
    """Observed costs of one template, with the binding behind each cost."""

    template_id: str
    costs: list[float] = field(default_factory=list)
    bindings_log: list[dict] = field(default_factory=list)
    failures: int = 0

    def __post_init__(self):
        if len(self.costs) != len(self.bindings_log):
            raise ValueError("costs and bindings_log must have equal length")

    def extend(self, costs, bindings):
        costs, bindings = list(costs), list(bindings)
        if len(costs) != len(bindings):
            raise ValueError("costs and bindings must have equal length")
        self.costs.extend(float(c) for c in costs)
        self.bindings_log.extend(bindings)

    @property
    def variety(self) -> float:
        """Distinct costs over total costs."""
        return len(set(self.costs)) / len(self.costs) if self.costs else 0.0


def lhs_unit(n: int, d: int, rng) -> np.ndarray:
    """``n`` points in [0, 1)^d, one per equal-width stratum in every dimension."""
    if n < 1:
        raise ValueError("need at least one sample")
    out = np.empty((n, d))
    for k in range(d):
        out[:, k] = (rng.permutation(n) + rng.random(n)) / n
    return out


def lhs_sample(domains: list[ValueDomain], n: int, rng) -> list[list]:
    """Latin hypercube over mixed domains.

    Numeric ranges are stratified directly; categorical domains are stratified
    over index space ``[0, len(values))`` and mapped back.
    """
    if not domains:
        raise EmptyDomain("no placeholder domains to sample")
    for dom in domains:
        if dom is None:
            raise EmptyDomain("placeholder without a domain")
    u = lhs_unit(n, len(domains), rng)
    return [[dom.from_unit(u[i, k]) for k, dom in enumerate(domains)] for i in range(n)]


def space_size(template: SqlTemplate) -> int:
    size = 1
    for p in template.placeholders:
        size = min(size * max(p.domain.cardinality(), 1), SPACE_CEILING)
    return size


def default_budget(num_queries: int, num_templates: int,
                   fraction: float = PROFILE_FRACTION, floor: int = MIN_PROFILE_BUDGET) -> int:
    """Per-template share of the profiling budget (a fraction of the workload size)."""
    return max(floor, math.ceil(fraction * num_queries / max(num_templates, 1)))


class ProfileStore:
    """Append-only line-delimited profiling log: one record per evaluated query."""

    def __init__(self, path: str | Path | None = None, clock=time.time):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._clock = clock
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, template_id: str, bindings: dict, cost: float | None, error: str | None = None):
        if not self.path:
            return
        rec = {"template_id": template_id,
               "bindings": {k: _json_value(v) for k, v in bindings.items()},
               "cost": cost, "timestamp": round(self._clock(), 6)}
        if error:
            rec["error"] = error
        line = json.dumps(rec, sort_keys=True)
        with self._lock, self.path.open("a") as fh:
            fh.write(line + "\n")

    def load(self) -> dict[str, ProfileRecord]:
        out: dict[str, ProfileRecord] = {}
        if not self.path or not self.path.exists():
            return out
        for line in self.path.read_text().splitlines():
            rec = json.loads(line)
            r = out.setdefault(rec["template_id"], ProfileRecord(rec["template_id"]))
            if rec.get("cost") is None:
                r.failures += 1
            else:
                r.extend([rec["cost"]], [rec["bindings"]])
        return out


def _json_value(v):
    if hasattr(v, "isoformat"):
        return v.isoformat()
    if hasattr(v, "item"):
        return v.item()
    return v


def evaluate_bindings(template: SqlTemplate, oracle, rows, store: ProfileStore | None = None):
    """Instantiate and cost each binding row. Returns (costs, bindings, failures).

    Per-query failures are logged and skipped; an unreachable oracle propagates.
    """
    names = [p.name for p in template.placeholders]
    costs, kept, failures = [], [], 0
    for row in rows:
        b = dict(zip(names, row))
        try:
            q = instantiate(template, b)
            c = oracle.evaluate(q.sql_text).value
        except OracleUnavailable:
            raise
        except (QueryFailed, ValueError) as e:
            failures += 1
            log.debug("template %s: %s", template.id, e)
            if store:
                store.append(template.id, b, None, str(e))
            continue
        costs.append(c)
        kept.append(b)
        if store:
            store.append(template.id, b, c)
    return costs, kept, failures


def profile(template: SqlTemplate, oracle, budget: int, rng, store: ProfileStore | None = None) -> ProfileRecord:
    """Cost ``budget`` Latin hypercube bindings of ``template``.

    Failed evaluations count against the budget, so the cost vector may be
    shorter than ``budget``.
    """
    if budget < 1:
        raise ValueError("profiling budget must be >= 1")
    if template.placeholders:
        rows = lhs_sample(template.domains, budget, rng)
    else:
        rows = [[]]
    costs, kept, failures = evaluate_bindings(template, oracle, rows, store)
    rec = ProfileRecord(template.id, costs, kept, failures)
    if failures:
        log.info("template %s: %d of %d profiling queries failed", template.id, failures, len(rows))
    return rec


class _Buffer:
    """Collects store records of one template so they can be written in a fixed order."""

    def __init__(self):
        self.records = []

    def append(self, *args, **kw):
        self.records.append((args, kw))


def profile_all(templates, oracle, budget: int, rng, store: ProfileStore | None = None,
                parallelism: int = 1) -> dict[str, ProfileRecord]:
    """Profile every template, up to ``parallelism`` at a time.

    Each template gets its own generator drawn from ``rng`` in template order and
    store records are flushed in that order, so results do not depend on scheduling.
    """
    templates = list(templates)
    seeds = [int(rng.integers(2**63)) for _ in templates]
    buffers = [_Buffer() for _ in templates]

    def run(i):
        return profile(templates[i], oracle, budget, np.random.default_rng(seeds[i]), buffers[i])

    if parallelism > 1 and len(templates) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            recs = list(pool.map(run, range(len(templates))))
    else:
        recs = [run(i) for i in range(len(templates))]
    if store is not None:
        for buf in buffers:
            for args, kw in buf.records:
                store.append(*args, **kw)
    return {r.template_id: r for r in recs}


def binding_key(bindings: dict) -> tuple:
    return tuple(sorted((k, render_literal(v)) for k, v in bindings.items()))
