"""Gap filling by Bayesian optimization over template predicate values."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .distribution import CostHistogram, bin_index, largest_gap, wasserstein
from .model import CostValue, SqlQuery, SqlTemplate, instantiate
from .oracle import OracleUnavailable, QueryFailed
from .profiler import ProfileRecord, lhs_sample, space_size
from .refinery import closeness

log = logging.getLogger(__name__)


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class SearchParams:
    budget_factor: int = 5          # BO budget per run, in multiples of the gap
    utility_threshold: float = 0.05
    max_failures: int = 5
    sample_size: int = 10           # templates drawn per gap
    min_variety: float = 0.1
    init_max: int = 10
    warm_start_top: int = 10
    n_trees: int = 50
    n_random: int = 500
    n_local: int = 50
    xi: float = 1e-3
    refits: int = 25                # surrogate refits per run; sets the batch size
    early_stop: bool = True
    naive: bool = False
    checkpoint_every: int = 50
    max_evaluations: int | None = None  # stop gap filling once this many oracle calls were spent


def objective(c: float, c_l: float, c_r: float) -> float:
    """0 inside ``[c_l, c_r]``; otherwise one minus the best multiplicative closeness to a bound."""
    if c_l <= c <= c_r:
        return 0.0
    if c <= 0 or c_r <= 0:
        return 1.0
    right = min(c / c_r, c_r / c)
    if c_l <= 0:
        return 1.0 - right
    return 1.0 - max(min(c / c_l, c_l / c), right)


def utility_ratio(new_costs, target: CostHistogram, current: CostHistogram) -> float:
    """Fraction of ``new_costs`` that fill a gapped bin, consuming gaps in order."""
    new_costs = list(new_costs)
    if not new_costs:
        raise EmptyInput("utility ratio of an empty cost list")
    cur = current.counts.copy()
    filled = 0
    for c in new_costs:
        j = bin_index(target.intervals, c)
        if j is not None and cur[j] < target.counts[j]:
            cur[j] += 1
            filled += 1
    return filled / len(new_costs)


# -- surrogate ---------------------------------------------------------------

class Surrogate:
    """Random forest over unit-encoded bindings, suggesting by expected improvement."""

    def __init__(self, domains, rng, params: SearchParams = SearchParams()):
        self.domains = list(domains)
        self.rng = rng
        self.p = params
        self.model = None
        self.X = None
        self.y = None

    def encode(self, row) -> np.ndarray:
        return np.array([d.to_unit(v) for d, v in zip(self.domains, row)], dtype=float)

    def decode(self, u) -> list:
        return [d.from_unit(x) for d, x in zip(self.domains, u)]

    def fit(self, rows, ys):
        self.X = np.array([self.encode(r) for r in rows])
        self.y = np.asarray(ys, dtype=float)
        self.model = RandomForestRegressor(n_estimators=self.p.n_trees, min_samples_leaf=1,
                                           random_state=int(self.rng.integers(2**31)), n_jobs=1)
        self.model.fit(self.X, self.y)

    def _candidates(self):
        d = len(self.domains)
        cands = [self.rng.random((self.p.n_random, d))]
        best = np.flatnonzero(self.y == self.y.min())
        inc = self.X[int(best[self.rng.integers(len(best))])]
        scales = self.rng.choice([0.1, 0.03, 0.01], size=(self.p.n_local, 1))
        cands.append(np.clip(inc + self.rng.normal(size=(self.p.n_local, d)) * scales, 0.0, 1.0))
        return np.vstack(cands)

    def expected_improvement(self, U) -> np.ndarray:
        per_tree = np.stack([t.predict(U) for t in self.model.estimators_])
        return np.maximum(self.y.min() + self.p.xi - per_tree, 0.0).mean(axis=0)

    def suggest(self, count: int, exclude: set) -> list[list]:
        """Up to ``count`` distinct in-domain rows with the highest expected improvement."""
        U = self._candidates()
        rows = [self.decode(u) for u in U]
        Xs = np.array([self.encode(r) for r in rows])
        ei = self.expected_improvement(Xs)
        order = np.lexsort((self.rng.random(len(ei)), -ei))
        out, keys = [], set()
        for i in order:
            key = _row_key(rows[i])
            if key in exclude or key in keys:
                continue
            keys.add(key)
            out.append(rows[i])
            if len(out) == count:
                break
        return out


def _row_key(row) -> tuple:
    return tuple(repr(v) for v in row)


# -- one optimization run ------------------------------------------------------

@dataclass
class BoRun:
    template_id: str
    interval: tuple[float, float]
    budget: int
    evaluated: list[tuple[dict, float, float]] = field(default_factory=list)
    queries: list[SqlQuery] = field(default_factory=list)
    failures: int = 0

    @property
    def used(self) -> int:
        return len(self.evaluated) + self.failures

    @property
    def costs(self) -> list[float]:
        return [c for _, c, _ in self.evaluated]


def bayesian_optimize(template: SqlTemplate, interval, budget: int, oracle, warm_start, rng,
                      params: SearchParams = SearchParams(), target_bin: int | None = None,
                      intervals=None, stop_after: int | None = None, exclude=None) -> BoRun:
    """Search ``template``'s placeholder space for bindings whose cost falls in ``interval``.

    ``warm_start`` is a list of ``(bindings, cost)`` already observed; the best of
    them under the current interval seed the surrogate without using budget.
    With ``stop_after`` the run ends after that many in-interval hits.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    lo, hi = interval
    run = BoRun(template.id, (lo, hi), budget)
    names = [p.name for p in template.placeholders]
    domains = template.domains

    def hit(c):
        if target_bin is not None and intervals is not None:
            return bin_index(intervals, c) == target_bin
        return lo <= c <= hi

    hits = 0
    seen = set(exclude or ())

    def evaluate(rows):
        nonlocal hits
        for row in rows:
            if run.used >= budget or (stop_after is not None and hits >= stop_after):
                return
            b = dict(zip(names, row))
            seen.add(_row_key(row))
            try:
                q = instantiate(template, b)
                cv = oracle.evaluate(q.sql_text)
            except OracleUnavailable:
                raise
            except (QueryFailed, ValueError) as e:
                run.failures += 1
                log.debug("template %s: %s", template.id, e)
                continue
            c = cv.value
            run.evaluated.append((b, c, objective(c, lo, hi)))
            run.queries.append(replace(q, cost=cv))
            hits += hit(c)

    def done():
        return run.used >= budget or (stop_after is not None and hits >= stop_after)

    if not names:
        evaluate([[]])
        return run

    if params.naive:
        stale = 0
        while not done() and stale < 100:
            row = [d.from_unit(u) for d, u in zip(domains, rng.random(len(domains)))]
            if _row_key(row) in seen:
                stale += 1
                continue
            stale = 0
            evaluate([row])
        return run

    n_init = max(1, min(budget // 5, params.init_max))
    evaluate(_fresh(lhs_sample(domains, n_init, rng), seen))
    warm = sorted(((b, c, objective(c, lo, hi)) for b, c in (warm_start or [])),
                  key=lambda t: t[2])[: params.warm_start_top]
    warm_rows = [[b[n] for n in names] for b, _, _ in warm]
    warm_y = [o for _, _, o in warm]
    batch = max(1, math.ceil(budget / params.refits))
    sur = Surrogate(domains, rng, params)
    while not done():
        rows = warm_rows + [[b[n] for n in names] for b, _, _ in run.evaluated]
        ys = warm_y + [o for _, _, o in run.evaluated]
        if not rows:
            evaluate(_fresh(lhs_sample(domains, batch, rng), seen))
            if not run.evaluated:
                break
            continue
        sur.fit(rows, ys)
        want = min(batch, budget - run.used)
        if stop_after is not None:
            want = min(want, max(1, stop_after - hits))
        sugg = sur.suggest(want, seen)
        if not sugg:
            break
        evaluate(sugg)
    return run


def _fresh(rows, seen):
    return [r for r in rows if _row_key(r) not in seen]


# -- the gap-filling loop -------------------------------------------------------

@dataclass
class SearchState:
    current: CostHistogram
    bad: set = field(default_factory=set)
    skip: set = field(default_factory=set)
    remaining: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    queries: list = field(default_factory=list)      # accepted (SqlQuery, bin)
    overshoot: list = field(default_factory=list)     # evaluated but not accepted
    trace: list = field(default_factory=list)
    evaluations: int = 0
    bo_runs: int = 0
    accepted_sql: set = field(default_factory=set)

    def accept(self, q: SqlQuery, target: CostHistogram) -> bool:
        j = bin_index(target.intervals, q.cost.value)
        if j is None or self.current.counts[j] >= target.counts[j] or q.sql_text in self.accepted_sql:
            return False
        self.current.counts[j] += 1
        self.queries.append((q, j))
        self.accepted_sql.add(q.sql_text)
        return True


class BudgetExhausted(Exception):
    pass


def seed_state(templates, profiles: dict[str, ProfileRecord], target: CostHistogram,
               metric: str = "plan_cost") -> SearchState:
    """Start the workload from profiling queries, capped at the target count per bin."""
    state = SearchState(CostHistogram(target.intervals))
    for t in templates:
        rec = profiles.get(t.id)
        n_seen = len(rec.costs) + rec.failures if rec else 0
        state.remaining[t.id] = max(0, space_size(t) - n_seen)
        if not rec:
            continue
        for b, c in zip(rec.bindings_log, rec.costs):
            state.accept(replace(instantiate(t, b), cost=CostValue(metric, c)), target)
    return state


def fill_distribution(templates, profiles: dict[str, ProfileRecord], target: CostHistogram, oracle,
                      rng, params: SearchParams = SearchParams(), state: SearchState | None = None,
                      deadline: float | None = None, on_checkpoint=None, clock=time.time,
                      store=None) -> SearchState:
    """Close the remaining gaps between the workload histogram and ``target``.

    Runs until no positive gap remains outside the skipped intervals. With a
    ``deadline`` (a ``clock()`` value) the loop stops between optimization
    runs and raises :class:`BudgetExhausted` carrying the state; so does
    spending ``params.max_evaluations`` oracle calls.
    """
    by_id = {t.id: t for t in templates}
    if state is None:
        state = seed_state(templates, profiles, target, oracle.metric)
    intervals = target.intervals
    since_ckpt = 0
    while True:
        gap = largest_gap(target, state.current, state.skip)
        if gap is None:
            break
        j, delta = gap
        bounds = intervals.bounds(j)
        scored = []
        for t in templates:
            rec = profiles.get(t.id)
            if not rec or not rec.costs:
                continue
            if (j, t.id) in state.bad:
                continue
            if state.remaining.get(t.id, 0) < params.budget_factor * delta:
                continue
            if rec.variety < params.min_variety:
                continue
            scored.append((t.id, closeness(rec, bounds)))
        if not scored:
            state.skip.add(j)
            state.trace.append(_trace(clock, j, delta, None, 0, 0, None, state, target, "skip"))
            continue
        ids = [i for i, _ in scored]
        w = np.array([s for _, s in scored], dtype=float)
        w = w / w.sum() if w.sum() > 0 else np.full(len(w), 1.0 / len(w))
        pick = rng.choice(len(ids), size=min(params.sample_size, len(ids)), replace=False, p=w)
        improved = False
        for i in pick:
            live = int(target.counts[j] - state.current.counts[j])
            if live <= 0:
                break
            if deadline is not None and clock() >= deadline:
                raise BudgetExhausted(state)
            budget = params.budget_factor * live
            if params.max_evaluations is not None:
                budget = min(budget, params.max_evaluations - state.evaluations)
                if budget < 1:
                    raise BudgetExhausted(state)
            t = by_id[ids[i]]
            rec = profiles[t.id]
            before_j = int(state.current.counts[j])
            run = bayesian_optimize(
                t, bounds, budget, oracle,
                list(zip(rec.bindings_log, rec.costs)), rng, params, target_bin=j,
                intervals=intervals, stop_after=live if params.early_stop else None,
                exclude={_row_key([b[p.name] for p in t.placeholders]) for b in rec.bindings_log})
            state.bo_runs += 1
            state.evaluations += run.used
            since_ckpt += run.used
            state.remaining[t.id] = max(0, state.remaining.get(t.id, 0) - run.used)
            costs = run.costs
            util = utility_ratio(costs, target, state.current) if costs else 0.0
            rec.extend(costs, [b for b, _, _ in run.evaluated])
            rec.failures += run.failures
            if store is not None:
                for b, c, _ in run.evaluated:
                    store.append(t.id, b, c)
            hits = 0
            for q in run.queries:
                if state.accept(q, target):
                    hits += bin_index(intervals, q.cost.value) == j
                else:
                    state.overshoot.append((q, bin_index(intervals, q.cost.value)))
            if state.current.counts[j] > before_j:
                improved = True
            if util < params.utility_threshold:
                state.bad.add((j, t.id))
            state.trace.append(_trace(clock, j, delta, t.id, run.used, hits, util, state, target, "bo"))
            if on_checkpoint is not None and since_ckpt >= params.checkpoint_every:
                on_checkpoint(state)
                since_ckpt = 0
        if not improved:
            state.failures[j] = state.failures.get(j, 0) + 1
            if state.failures[j] >= params.max_failures:
                state.skip.add(j)
    return state


def _trace(clock, j, delta, template_id, used, hits, util, state, target, kind) -> dict:
    return {"timestamp": round(clock(), 6), "kind": kind, "interval": j, "gap": delta,
            "template": template_id, "evaluations": used, "hits": hits, "utility": util,
            "distance": wasserstein(state.current, target)}
