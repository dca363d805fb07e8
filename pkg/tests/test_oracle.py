import json
import os

import pytest

from sqlshaper.oracle import (QueryFailed, SyntheticOracle, extract_plan_cost, literal_vector,
                              make_oracle)


def test_literal_vector():
    sql = "SELECT COUNT(*) AS agg_1 FROM t1 AS x WHERE x.a <= 12.5 AND x.d >= '1995-01-02' AND x.n = 'v 7'"
    import datetime as dt
    assert literal_vector(sql) == [12.5, float(dt.date(1995, 1, 2).toordinal())]
    assert literal_vector("SELECT * FROM t WHERE a < -3 AND b > 1e3") == [-3.0, 1000.0]


@pytest.mark.parametrize("fn,params,sql,expect", [
    ("constant", {}, "SELECT 1 WHERE a < 900", 42.0),
    ("identity", {}, "SELECT * FROM t WHERE a < 900 AND b > 5", 900.0),
    ("identity", {"scale": 2, "offset": 1}, "SELECT * FROM t WHERE a < 900", 1801.0),
    ("linear", {"weights": [1, 10], "intercept": 3}, "SELECT * FROM t WHERE a < 2 AND b < 5", 55.0),
    ("step", {"width": 100}, "SELECT * FROM t WHERE a < 1299.5", 1200.0),
    ("multimodal", {}, "SELECT * FROM t WHERE a < 625", 10000.0),
    ("identity", {"offset": -10}, "SELECT * FROM t WHERE a < 3", 0.0),
])
def test_synthetic_functions(fn, params, sql, expect):
    o = SyntheticOracle(fn, **params)
    assert o.evaluate(sql).value == pytest.approx(expect)
    assert o.evaluate(sql).value == pytest.approx(expect)
    assert o.log.mutating() == []


def test_shadow_schema_validation(lab):
    o = SyntheticOracle("identity", catalog=lab)
    assert o.validate("SELECT COUNT(*) FROM lab_items AS t1 WHERE t1.weight < 3") == (True, [])
    ok, errs = o.validate("SELECT COUNT(*) FROM lab_items AS t1 WHERE t1.nope < 3")
    assert not ok and "nope" in errs[0]
    ok, errs = o.validate("SELCT COUNT(*) FROM lab_items")
    assert not ok
    assert not o.validate("SELECT * FROM lab_items WHERE weight < {p_1}")[0]
    assert not o.validate("DELETE FROM lab_items")[0]
    with pytest.raises(QueryFailed):
        o.evaluate("DELETE FROM lab_items")
    assert o.log.mutating() == []


def test_plan_parsing():
    doc = [{"Plan": {"Node Type": "Aggregate", "Total Cost": 1234.5, "Plan Rows": 17,
                     "Plans": [{"Node Type": "Seq Scan", "Total Cost": 1000.0, "Plan Rows": 5000}]}}]
    assert extract_plan_cost(doc, "plan_cost") == 1234.5
    assert extract_plan_cost(json.dumps(doc), "cardinality") == 17.0


def test_make_oracle():
    o = make_oracle({"kind": "synthetic", "function": "step", "width": 10}, metric="cardinality")
    assert o.metric == "cardinality" and o.evaluate("SELECT * FROM t WHERE a < 25").value == 20.0
    with pytest.raises(ValueError):
        make_oracle({"kind": "magic"})


PG = os.environ.get("SQLSHAPER_PG_URL")


@pytest.mark.livedb
@pytest.mark.skipif(not PG, reason="SQLSHAPER_PG_URL not set")
def test_postgres_explain_oracle():
    o = make_oracle({"kind": "postgres_explain", "url": PG})
    c = o.evaluate("SELECT * FROM generate_series(1, 1000) AS g WHERE g < 500").value
    assert c > 0
    assert o.validate("SELECT nope FROM generate_series(1, 3) AS g")[0] is False
    rows = make_oracle({"kind": "postgres_explain", "url": PG}, metric="cardinality")
    assert rows.evaluate("SELECT * FROM generate_series(1, 1000) AS g").value == 1000.0
    assert o.log.mutating() == [] and all(s.startswith("EXPLAIN") for s in o.log.statements)
