import sqlite3
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from fixtures import IMDB_TABLES, TPCH_EDGES
from sqlshaper.catalog import (ColumnMeta, JoinEdge, NoPathForJoinCount, SchemaCatalog, TableMeta,
                               enumerate_join_paths, introspect, sample_join_path,
                               summarize_catalog, summarize_for_prompt)
from sqlshaper.db import StatementLog


def edge_set(cat):
    return {(e.left, e.left_columns, e.right, e.right_columns) for e in cat.join_edges}


def test_users_orders(users_db):
    log = StatementLog()
    cat = introspect(f"sqlite:///{users_db}", log)
    assert [t.name for t in cat.tables] == ["orders", "users"]
    assert edge_set(cat) == {("orders", ("user_id",), "users", ("user_id",))}
    users = cat.table("users")
    assert users.row_count == 100 and users.primary_key == ("user_id",)
    age = users.column("age")
    assert (age.data_type, age.min, age.max, age.distinct_count) == ("integer", 18, 67, 50)
    assert cat.table("users").column("country").sample_values == ("DE", "FR", "NL")
    assert len(log) > 0 and log.mutating() == []


def test_empty_database(tmp_path):
    p = tmp_path / "empty.db"
    sqlite3.connect(p).close()
    cat = introspect(f"sqlite:///{p}")
    assert cat.tables == [] and cat.join_edges == []


def test_tpch_fk_edges(tpch_db):
    cat = introspect(f"sqlite:///{tpch_db}")
    assert len(cat.tables) == 8
    assert edge_set(cat) == TPCH_EDGES


def test_catalog_round_trip(tpch_db, tmp_path):
    cat = introspect(f"sqlite:///{tpch_db}")
    cat.save(tmp_path / "c.json")
    again = SchemaCatalog.load(tmp_path / "c.json")
    assert again.dumps() == cat.dumps()
    assert introspect(f"sqlite:///{tpch_db}").dumps() == cat.dumps()


def test_catalog_validation():
    with pytest.raises(ValueError):
        TableMeta("t", 10, 0, (ColumnMeta("a", "integer", 11),))
    t = TableMeta("t", 10, 0, (ColumnMeta("a", "integer", 5),))
    with pytest.raises(ValueError):
        SchemaCatalog([t], [JoinEdge("t", ("zz",), "t", ("a",))])
    with pytest.raises(ValueError):
        SchemaCatalog([t, t])


def triangle():
    tabs = [TableMeta(n, 1, 0, (ColumnMeta("id", "integer", 1), ColumnMeta("x", "integer", 1)))
            for n in "ABC"]
    edges = [JoinEdge("A", ("x",), "B", ("id",)), JoinEdge("B", ("x",), "C", ("id",)),
             JoinEdge("A", ("id",), "C", ("x",))]
    return SchemaCatalog(tabs, edges)


def brute_force_paths(cat, k):
    """Every simple edge sequence of length k, canonicalized under reversal."""
    out = set()

    def walk(tables, edges):
        if len(edges) == k:
            fwd = (tuple(tables), tuple(edges))
            rev = (tuple(tables[::-1]), tuple(edges[::-1]))
            out.add(min(fwd, rev))
            return
        for i, e in enumerate(cat.join_edges):
            if e.touches(tables[-1]) and e.other(tables[-1]) not in tables and e.left != e.right:
                walk(tables + [e.other(tables[-1])], edges + [i])

    for t in cat.tables:
        walk([t.name], [])
    return out


def canon(cat, p):
    idx = [cat.join_edges.index(e) for e in p.edges]
    fwd, rev = (p.tables, tuple(idx)), (p.tables[::-1], tuple(idx[::-1]))
    return min(fwd, rev)


def test_join_path_examples(users_db):
    uo = introspect(f"sqlite:///{users_db}")
    assert len(enumerate_join_paths(uo, 1)) == 1
    assert len(enumerate_join_paths(uo, 0)) == 2
    tri = triangle()
    paths = enumerate_join_paths(tri, 2)
    assert len(paths) == 3
    assert {canon(tri, p) for p in paths} == brute_force_paths(tri, 2)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_join_paths_match_brute_force(imdb, k):
    paths = enumerate_join_paths(imdb, k)
    got = [canon(imdb, p) for p in paths]
    assert len(got) == len(set(got))
    assert set(got) == brute_force_paths(imdb, k)
    assert all(len(set(p.tables)) == len(p.tables) == k + 1 for p in paths)


def test_path_cap_reservoir(imdb):
    full = enumerate_join_paths(imdb, 3)
    capped = enumerate_join_paths(imdb, 3, cap=10, seed=1)
    assert len(capped) == 10 and {canon(imdb, p) for p in capped} <= {canon(imdb, p) for p in full}


def test_sampling():
    tri = triangle()
    paths = enumerate_join_paths(tri, 2)
    assert sample_join_path(paths[:1], np.random.default_rng(0)) is paths[0]
    a = [sample_join_path(paths, np.random.default_rng(5)) for _ in range(3)]
    assert a[0] == a[1] == a[2]
    rng = np.random.default_rng(0)
    counts = Counter(paths.index(sample_join_path(paths, rng)) for _ in range(10000))
    assert chisquare([counts[i] for i in range(3)]).pvalue > 0.001
    with pytest.raises(NoPathForJoinCount):
        sample_join_path([], rng)


def test_prompt_summary(users_db, tpch_db, imdb):
    uo = introspect(f"sqlite:///{users_db}")
    p = enumerate_join_paths(uo, 1)[0]
    s = summarize_for_prompt(uo, p)
    assert s == summarize_for_prompt(uo, p)
    assert s.count("Table ") == 2
    tp = introspect(f"sqlite:///{tpch_db}")
    p = enumerate_join_paths(tp, 1)[0]
    assert len(summarize_for_prompt(tp, p)) < len(summarize_catalog(tp))
    p = enumerate_join_paths(imdb, 1)[0]
    text = summarize_for_prompt(imdb, p)
    others = [t for t in IMDB_TABLES if t not in p.tables]
    import re
    assert not [t for t in others if re.search(rf"\b{t}\b", text)]
