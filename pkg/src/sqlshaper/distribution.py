"""Cost histograms over fixed intervals and the distance between them."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .model import COST_METRICS


class BadSpec(ValueError):
    pass


class IntervalMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CostIntervals:
    """Contiguous half-open intervals ``[edges[j], edges[j+1])``."""

    edges: tuple[float, ...]

    def __post_init__(self):
        e = tuple(float(x) for x in self.edges)
        object.__setattr__(self, "edges", e)
        if len(e) < 2:
            raise BadSpec("need at least one interval")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise BadSpec("interval edges must be strictly increasing")

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "CostIntervals":
        if n < 1:
            raise BadSpec("number of intervals must be >= 1")
        if not hi > lo:
            raise BadSpec(f"empty cost range [{lo}, {hi})")
        step = (hi - lo) / n
        edges = [lo + j * step for j in range(n)] + [hi]
        return cls(tuple(edges))

    @property
    def n(self) -> int:
        return len(self.edges) - 1

    @property
    def lo(self) -> float:
        return self.edges[0]

    @property
    def hi(self) -> float:
        return self.edges[-1]

    def bounds(self, j: int) -> tuple[float, float]:
        return self.edges[j], self.edges[j + 1]

    def __iter__(self):
        return iter(zip(self.edges, self.edges[1:]))

    def __len__(self):
        return self.n

    def midpoints(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return (e[:-1] + e[1:]) / 2

    def widths(self) -> np.ndarray:
        return np.diff(np.asarray(self.edges))


@dataclass
class CostHistogram:
    intervals: CostIntervals
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.intervals.n, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64).copy()
        if self.counts.shape != (self.intervals.n,):
            raise BadSpec(f"expected {self.intervals.n} counts, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise BadSpec("histogram counts must be non-negative")

    def copy(self) -> "CostHistogram":
        return CostHistogram(self.intervals, self.counts.copy())

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, cost: float) -> int | None:
        j = bin_index(self.intervals, cost)
        if j is not None:
            self.counts[j] += 1
        return j

    def __eq__(self, other):
        return (isinstance(other, CostHistogram) and self.intervals == other.intervals
                and np.array_equal(self.counts, other.counts))


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    cost_type: str
    range: tuple[float, float]
    num_queries: int
    num_intervals: int
    shape: str = "uniform"
    mean: float | None = None
    stddev: float | None = None
    weights: tuple[float, ...] | None = None
    path: str | None = None

    def __post_init__(self):
        if self.cost_type not in COST_METRICS:
            raise BadSpec(f"cost_type must be one of {COST_METRICS}")
        if self.num_intervals < 1:
            raise BadSpec("num_intervals must be >= 1")
        if self.num_queries < self.num_intervals:
            raise BadSpec("num_queries must be >= num_intervals")
        lo, hi = self.range
        if not hi > lo:
            raise BadSpec(f"empty cost range [{lo}, {hi})")
        if self.shape == "normal":
            if self.mean is None or self.stddev is None or not self.stddev > 0:
                raise BadSpec("normal shape needs mean and a positive stddev")
        elif self.shape == "file":
            if self.weights is None and self.path is None:
                raise BadSpec("file shape needs a weights path")
        elif self.shape != "uniform":
            raise BadSpec(f"unknown shape {self.shape!r}")

    @property
    def intervals(self) -> CostIntervals:
        return CostIntervals.uniform(self.range[0], self.range[1], self.num_intervals)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "BenchmarkSpec":
        try:
            shape = d.get("shape", "uniform")
            kw = {}
            if isinstance(shape, dict):
                kind = shape.get("kind", "uniform")
                kw = {k: v for k, v in shape.items() if k != "kind"}
                shape = kind
            rng = d.get("range", (0, 10000))
            path = kw.get("path", d.get("path"))
            if path is not None and base_dir is not None and not Path(path).is_absolute():
                path = str(Path(base_dir) / path)
            return cls(
                name=str(d.get("name", "benchmark")),
                cost_type=d.get("cost_type", "plan_cost"),
                range=(float(rng[0]), float(rng[1])),
                num_queries=int(d["num_queries"]),
                num_intervals=int(d["num_intervals"]),
                shape=shape,
                mean=kw.get("mean", d.get("mean")),
                stddev=kw.get("stddev", d.get("stddev")),
                weights=tuple(kw["weights"]) if "weights" in kw else None,
                path=path,
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, BadSpec):
                raise
            raise BadSpec(f"invalid benchmark spec: {e}") from e


def read_weights(path: str | Path) -> list[float]:
    """One non-negative real per line; blank lines and ``#`` comments are ignored."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(float(line))
    return out


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``.

    Ties on the fractional remainder go to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    if (w < 0).any() or not np.isfinite(w).all():
        raise BadSpec("weights must be finite and non-negative")
    s = w.sum()
    if s <= 0:
        raise BadSpec("weights sum to zero")
    quota = w / s * total
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    rem = quota - base
    order = sorted(range(len(w)), key=lambda j: (-rem[j], j))
    for j in order[:short]:
        base[j] += 1
    return base


def build_target(spec: BenchmarkSpec) -> CostHistogram:
    iv = spec.intervals
    n, total = spec.num_intervals, spec.num_queries
    if spec.shape == "uniform":
        counts = np.full(n, total // n, dtype=np.int64)
        counts[: total % n] += 1
    elif spec.shape == "normal":
        e = np.asarray(iv.edges)
        cdf = ndtr((e - spec.mean) / spec.stddev)
        mass = np.diff(cdf)
        if mass.sum() <= 0:
            raise BadSpec("normal shape puts no mass inside the cost range")
        counts = largest_remainder(mass, total)
    else:
        weights = spec.weights if spec.weights is not None else read_weights(spec.path)
        if len(weights) != n:
            raise BadSpec(f"weights file has {len(weights)} entries, expected {n}")
        counts = largest_remainder(weights, total)
    return CostHistogram(iv, counts)


def bin_index(intervals: CostIntervals, cost: float) -> int | None:
    if cost is None or not math.isfinite(cost):
        return None
    if cost < intervals.lo or cost >= intervals.hi:
        return None
    return bisect.bisect_right(intervals.edges, cost) - 1


def histogram_of(intervals: CostIntervals, costs: Iterable[float]) -> CostHistogram:
    h = CostHistogram(intervals)
    for c in costs:
        h.add(c)
    return h


def coverage(profiles, intervals: CostIntervals) -> np.ndarray:
    """Number of observed costs per interval, summed over all profile records."""
    c = np.zeros(intervals.n, dtype=np.int64)
    for rec in profiles:
        for cost in rec.costs:
            j = bin_index(intervals, cost)
            if j is not None:
                c[j] += 1
    return c


def _check_shared(a: CostHistogram, b: CostHistogram):
    if a.intervals != b.intervals:
        raise IntervalMismatch("histograms are defined over different intervals")


def _mass(h: CostHistogram) -> np.ndarray:
    total = h.counts.sum()
    if total == 0:
        # empty histogram: all mass at the lowest bin midpoint
        m = np.zeros(len(h.counts))
        m[0] = 1.0
        return m
    return h.counts / total


def wasserstein(a: CostHistogram, b: CostHistogram) -> float:
    """Earth mover's distance in cost units between the normalized histograms.

    Mass sits at bin midpoints, so the transport cost between neighbouring
    bins is the distance between their midpoints.
    """
    _check_shared(a, b)
    diff = np.cumsum(_mass(a) - _mass(b))[:-1]
    gaps = np.diff(a.intervals.midpoints())
    d = float(np.abs(diff) @ gaps) if len(gaps) else 0.0
    return 0.0 if d < 1e-12 * max(a.intervals.hi - a.intervals.lo, 1.0) else d


def largest_gap(target: CostHistogram, current: CostHistogram, skip=frozenset()):
    """``(j, gap)`` with the largest positive ``target - current`` outside ``skip``."""
    _check_shared(target, current)
    best = None
    for j in range(target.intervals.n):
        if j in skip:
            continue
        g = int(target.counts[j] - current.counts[j])
        if g > 0 and (best is None or g > best[1]):
            best = (j, g)
    return best
