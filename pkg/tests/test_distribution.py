import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sqlshaper.distribution import (BadSpec, BenchmarkSpec, CostHistogram, CostIntervals,
                                    IntervalMismatch, bin_index, build_target, coverage,
                                    largest_gap, wasserstein)
from sqlshaper.profiler import ProfileRecord

from oracles import transport_oracle

IV = CostIntervals.uniform(0, 10000, 10)


def spec(**kw):
    d = dict(name="b", cost_type="plan_cost", range=(0, 10000), num_queries=1000, num_intervals=10)
    d.update(kw)
    return BenchmarkSpec(**d)


def test_uniform_targets():
    assert build_target(spec()).counts.tolist() == [100] * 10
    s = spec(range=(0, 3), num_queries=7, num_intervals=3)
    assert build_target(s).counts.tolist() == [3, 2, 2]


def test_normal_target_against_numeric_integration():
    s = spec(shape="normal", mean=5000, stddev=1500)
    counts = build_target(s).counts
    assert counts.sum() == 1000
    assert all(abs(counts[j] - counts[9 - j]) <= 1 for j in range(10))
    # independent oracle: midpoint rule with 10,000 points per bin
    mass = []
    for lo, hi in IV:
        x = lo + (np.arange(10000) + 0.5) * (hi - lo) / 10000
        mass.append(np.sum(np.exp(-0.5 * ((x - 5000) / 1500) ** 2)) * (hi - lo) / 10000)
    expect = np.array(mass) / np.sum(mass) * 1000
    assert np.all(np.abs(counts - expect) < 1.0)


def test_file_target(tmp_path):
    p = tmp_path / "w.txt"
    p.write_text("# weights\n1\n1\n2\n")
    s = BenchmarkSpec.from_dict({"num_queries": 8, "num_intervals": 3, "range": [0, 3],
                                 "shape": {"kind": "file", "path": "w.txt"}}, tmp_path)
    assert build_target(s).counts.tolist() == [2, 2, 4]
    with pytest.raises(BadSpec):
        build_target(BenchmarkSpec.from_dict({"num_queries": 8, "num_intervals": 2, "range": [0, 3],
                                              "shape": {"kind": "file", "path": "w.txt"}}, tmp_path))


@settings(max_examples=200)
@given(st.integers(1, 40), st.integers(0, 5000), st.sampled_from(["uniform", "normal", "file"]),
       st.data())
def test_targets_sum_to_n(n, extra, shape, data):
    N = n + extra
    kw = {}
    if shape == "normal":
        kw = dict(mean=data.draw(st.floats(0, 10000)), stddev=data.draw(st.floats(100, 5000)))
    if shape == "file":
        kw = dict(weights=tuple(data.draw(st.lists(st.floats(0, 10), min_size=n, max_size=n)
                                          .filter(lambda w: sum(w) > 0))))
    counts = build_target(spec(num_queries=N, num_intervals=n, shape=shape, **kw)).counts
    assert counts.sum() == N and (counts >= 0).all()


def test_bad_specs():
    with pytest.raises(BadSpec):
        spec(num_queries=5, num_intervals=10)
    with pytest.raises(BadSpec):
        spec(shape="normal")
    with pytest.raises(BadSpec):
        spec(range=(5, 5))
    with pytest.raises(BadSpec):
        BenchmarkSpec.from_dict({"num_intervals": 3})


def test_bin_edges():
    assert bin_index(IV, 0) == 0
    assert bin_index(IV, 10000) is None
    assert bin_index(IV, -0.001) is None
    assert bin_index(IV, float("nan")) is None


@given(st.floats(-100, 10100))
def test_bin_matches_brute_force_scan(c):
    expect = next((j for j, (lo, hi) in enumerate(IV) if lo <= c < hi), None)
    assert bin_index(IV, c) == expect


def test_coverage_examples():
    assert coverage([], IV).tolist() == [0] * 10
    rec = ProfileRecord("t", [100, 150, 9999], [{}, {}, {}])
    assert coverage([rec], IV).tolist() == [2] + [0] * 8 + [1]
    assert coverage([ProfileRecord("t", [-5, 10000], [{}, {}])], IV).tolist() == [0] * 10


def test_wasserstein_examples():
    iv = CostIntervals.uniform(0, 200, 2)
    h = lambda c: CostHistogram(iv, c)
    assert wasserstein(h([1, 0]), h([1, 0])) == 0
    assert wasserstein(h([1, 0]), h([0, 1])) == pytest.approx(100)
    assert wasserstein(h([2, 0]), h([1, 1])) == pytest.approx(50)
    # empty histogram: all mass at the lowest bin
    assert wasserstein(h([0, 0]), h([0, 3])) == pytest.approx(100)
    with pytest.raises(IntervalMismatch):
        wasserstein(h([1, 0]), CostHistogram(CostIntervals.uniform(0, 300, 2), [1, 0]))


hist_pair = st.integers(1, 8).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.integers(0, 20), min_size=n, max_size=n),
    st.lists(st.integers(0, 20), min_size=n, max_size=n), st.lists(st.integers(0, 20), min_size=n, max_size=n)))


@settings(max_examples=150, deadline=None)
@given(hist_pair)
def test_wasserstein_is_a_metric(args):
    n, a, b, c = args
    iv = CostIntervals.uniform(0, 1000, n)
    A, B, C = (CostHistogram(iv, x) for x in (a, b, c))
    dab, dba = wasserstein(A, B), wasserstein(B, A)
    assert dab >= 0 and dab == pytest.approx(dba)
    assert wasserstein(A, C) <= dab + wasserstein(B, C) + 1e-9
    if sum(a) and sum(b) and np.allclose(np.array(a) / sum(a), np.array(b) / sum(b)):
        assert dab == 0


def test_largest_gap_examples():
    iv = CostIntervals.uniform(0, 2, 2)
    h = lambda c: CostHistogram(iv, c)
    assert largest_gap(h([5, 5]), h([5, 5])) is None
    assert largest_gap(h([10, 3]), h([2, 3])) == (0, 8)
    assert largest_gap(h([10, 3]), h([2, 3]), {0}) is None
    assert largest_gap(h([4, 4]), h([1, 1])) == (0, 3)
