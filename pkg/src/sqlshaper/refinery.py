"""Cost-aware template refinement with a prune rule on the resulting profiles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .catalog import SchemaCatalog, summarize_tables
from .distribution import (CostHistogram, CostIntervals, bin_index, coverage,
                           wasserstein)
from .forge import probe_executable
from .model import SqlTemplate
from .profiler import ProfileRecord, profile
from .providers import ProviderFailure
from .sqltext import tables_accessed

log = logging.getLogger(__name__)

HISTORY_CAP = 5


class EmptyProfile(ValueError):
    pass


@dataclass(frozen=True)
class RefinementPhase:
    tau: float
    k: int
    m: int
    use_history: bool

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.k < 1 or self.m < 1:
            raise ValueError("k and m must be >= 1")


DEFAULT_PHASES = (RefinementPhase(0.2, 3, 3, False), RefinementPhase(0.1, 5, 5, True))


def interval_distance(c: float, lo: float, hi: float) -> float:
    """Zero inside the closed interval, else the gap to the nearer bound."""
    if c < lo:
        return lo - c
    if c > hi:
        return c - hi
    return 0.0


def closeness(record: ProfileRecord, interval) -> float:
    """Variety over one plus the mean distance of the template's costs to ``interval``."""
    if not record.costs:
        raise EmptyProfile(f"template {record.template_id} has no observed costs")
    lo, hi = interval
    d = float(np.mean([interval_distance(c, lo, hi) for c in record.costs]))
    return record.variety / (1.0 + d)


def prune_check(new_costs, target_intervals, current: CostHistogram, target: CostHistogram) -> bool:
    """True to keep a refinement: it hits a targeted interval or moves the histogram closer to target."""
    targets = set(target_intervals)
    for c in new_costs:
        j = bin_index(current.intervals, c)
        if j is not None and j in targets:
            return True
    after = current.copy()
    for c in new_costs:
        after.add(c)
    # ignore rounding-level differences between equal distances
    eps = 1e-12 * (current.intervals.hi - current.intervals.lo)
    return wasserstein(after, target) < wasserstein(current, target) - eps


@dataclass
class RefineResult:
    templates: list[SqlTemplate]
    profiles: dict[str, ProfileRecord]
    history: dict[int, list[tuple[SqlTemplate, list[float]]]] = field(default_factory=dict)
    audit: list[dict] = field(default_factory=list)

    @property
    def accepted(self) -> list[SqlTemplate]:
        ids = {a["child"] for a in self.audit if a["outcome"] == "accepted"}
        return [t for t in self.templates if t.id in ids]


def low_coverage(profiles, intervals: CostIntervals, target: CostHistogram, tau: float) -> list[int]:
    cov = coverage(profiles, intervals)
    return [j for j in range(intervals.n) if cov[j] < tau * target.counts[j]]


def refine(templates, profiles: dict[str, ProfileRecord], target: CostHistogram, provider, oracle,
           rng, catalog: SchemaCatalog, budget: int, phases=DEFAULT_PHASES, store=None,
           history_cap: int = HISTORY_CAP) -> RefineResult:
    """Grow the template pool with refinements aimed at under-covered intervals.

    Seed templates are never removed. Each refinement is profiled with
    ``budget`` bindings and kept only if :func:`prune_check` accepts it.
    """
    intervals = target.intervals
    pool = list(templates)
    profs = dict(profiles)
    history: dict[int, list] = {}
    audit: list[dict] = []
    texts = {t.sql_text for t in pool}
    serial = 0
    for p_idx, phase in enumerate(phases):
        for it in range(phase.k):
            low = low_coverage(profs.values(), intervals, target, phase.tau)
            if not low:
                break
            low_set = set(low)
            for j in low:
                bounds = intervals.bounds(j)
                ranked = sorted(
                    (t for t in pool if profs.get(t.id) and profs[t.id].costs),
                    key=lambda t: (-closeness(profs[t.id], bounds), t.id))
                for parent in ranked[: phase.m]:
                    rec = {"phase": p_idx + 1, "iteration": it + 1, "interval": j,
                           "bounds": list(bounds), "parent": parent.id, "child": None}
                    hist = history.get(j, [])[-history_cap:] if phase.use_history else None
                    rec["history_entries"] = len(hist or [])
                    try:
                        text = provider.refine_template(
                            parent, profs[parent.id].costs, bounds, hist or None,
                            summarize_tables(catalog, tables_accessed(parent.sql_text)))
                    except ProviderFailure as e:
                        audit.append({**rec, "outcome": "failed", "reason": str(e)})
                        continue
                    if text in texts:
                        audit.append({**rec, "outcome": "duplicate"})
                        continue
                    serial += 1
                    child_id = f"{parent.id}_r{serial}"
                    child, errors = probe_executable(text, catalog, oracle, child_id,
                                                     parent.spec_id, parent.id)
                    if child is None:
                        audit.append({**rec, "child": child_id, "outcome": "failed",
                                      "reason": "; ".join(errors)})
                        continue
                    prof = profile(child, oracle, budget, rng, store)
                    current = CostHistogram(intervals, coverage(profs.values(), intervals))
                    before = wasserstein(current, target)
                    grown = current.copy()
                    for c in prof.costs:
                        grown.add(c)
                    after = wasserstein(grown, target)
                    keep = prune_check(prof.costs, low_set, current, target)
                    rec.update(child=child_id, distance_before=before, distance_after=after,
                               outcome="accepted" if keep else "pruned")
                    audit.append(rec)
                    if keep:
                        pool.append(child)
                        profs[child.id] = prof
                        texts.add(child.sql_text)
                        history.setdefault(j, []).append((child, list(prof.costs)))
    return RefineResult(pool, profs, history, audit)
