"""Schemas and small databases shared by the tests."""

from __future__ import annotations

import json
import sqlite3
from importlib import resources

import numpy as np

from sqlshaper.catalog import ColumnMeta, JoinEdge, SchemaCatalog, TableMeta

TPCH_DDL = """
CREATE TABLE region (r_regionkey INTEGER PRIMARY KEY, r_name TEXT, r_comment TEXT);
CREATE TABLE nation (n_nationkey INTEGER PRIMARY KEY, n_name TEXT,
    n_regionkey INTEGER REFERENCES region(r_regionkey), n_comment TEXT);
CREATE TABLE supplier (s_suppkey INTEGER PRIMARY KEY, s_name TEXT, s_address TEXT,
    s_nationkey INTEGER REFERENCES nation(n_nationkey), s_phone TEXT, s_acctbal REAL, s_comment TEXT);
CREATE TABLE customer (c_custkey INTEGER PRIMARY KEY, c_name TEXT, c_address TEXT,
    c_nationkey INTEGER REFERENCES nation(n_nationkey), c_phone TEXT, c_acctbal REAL,
    c_mktsegment TEXT, c_comment TEXT);
CREATE TABLE part (p_partkey INTEGER PRIMARY KEY, p_name TEXT, p_mfgr TEXT, p_brand TEXT,
    p_type TEXT, p_size INTEGER, p_container TEXT, p_retailprice REAL, p_comment TEXT);
CREATE TABLE partsupp (ps_partkey INTEGER REFERENCES part(p_partkey),
    ps_suppkey INTEGER REFERENCES supplier(s_suppkey), ps_availqty INTEGER, ps_supplycost REAL,
    ps_comment TEXT, PRIMARY KEY (ps_partkey, ps_suppkey));
CREATE TABLE orders (o_orderkey INTEGER PRIMARY KEY, o_custkey INTEGER REFERENCES customer(c_custkey),
    o_orderstatus TEXT, o_totalprice REAL, o_orderdate DATE, o_orderpriority TEXT, o_clerk TEXT,
    o_shippriority INTEGER, o_comment TEXT);
CREATE TABLE lineitem (l_orderkey INTEGER REFERENCES orders(o_orderkey), l_partkey INTEGER,
    l_suppkey INTEGER, l_linenumber INTEGER, l_quantity REAL, l_extendedprice REAL, l_discount REAL,
    l_tax REAL, l_returnflag TEXT, l_linestatus TEXT, l_shipdate DATE, l_commitdate DATE,
    l_receiptdate DATE, l_shipinstruct TEXT, l_shipmode TEXT, l_comment TEXT,
    PRIMARY KEY (l_orderkey, l_linenumber),
    FOREIGN KEY (l_partkey, l_suppkey) REFERENCES partsupp(ps_partkey, ps_suppkey));
"""

# (left, left columns, right, right columns) declared above
TPCH_EDGES = {
    ("nation", ("n_regionkey",), "region", ("r_regionkey",)),
    ("supplier", ("s_nationkey",), "nation", ("n_nationkey",)),
    ("customer", ("c_nationkey",), "nation", ("n_nationkey",)),
    ("partsupp", ("ps_partkey",), "part", ("p_partkey",)),
    ("partsupp", ("ps_suppkey",), "supplier", ("s_suppkey",)),
    ("orders", ("o_custkey",), "customer", ("c_custkey",)),
    ("lineitem", ("l_orderkey",), "orders", ("o_orderkey",)),
    ("lineitem", ("l_partkey", "l_suppkey"), "partsupp", ("ps_partkey", "ps_suppkey")),
}


def populate_tpch(conn, scale_rows: int = 40, seed: int = 0):
    """Tiny deterministic TPC-H-shaped data (referentially consistent)."""
    rng = np.random.default_rng(seed)
    cur = conn.cursor()
    regions = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"]
    cur.executemany("INSERT INTO region VALUES (?, ?, ?)", [(i, r, "c") for i, r in enumerate(regions)])
    cur.executemany("INSERT INTO nation VALUES (?, ?, ?, ?)",
                    [(i, f"NATION{i}", i % 5, "c") for i in range(10)])
    cur.executemany("INSERT INTO supplier VALUES (?, ?, ?, ?, ?, ?, ?)",
                    [(i, f"Supplier#{i}", "addr", i % 10, "phone", float(rng.uniform(-999, 9999)), "c")
                     for i in range(1, 11)])
    cur.executemany("INSERT INTO customer VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                    [(i, f"Customer#{i}", "addr", i % 10, "phone", float(rng.uniform(-999, 9999)),
                      ["BUILDING", "AUTOMOBILE", "MACHINERY"][i % 3], "c") for i in range(1, scale_rows + 1)])
    cur.executemany("INSERT INTO part VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    [(i, f"part{i}", "Manufacturer#1", f"Brand#{i % 5}", "STANDARD", int(rng.integers(1, 50)),
                      "SM BOX", float(rng.uniform(900, 2000)), "c") for i in range(1, 21)])
    ps = [(p, s, int(rng.integers(1, 9999)), float(rng.uniform(1, 1000)), "c")
          for p in range(1, 21) for s in (1 + p % 10, 1 + (p + 3) % 10)]
    cur.executemany("INSERT INTO partsupp VALUES (?, ?, ?, ?, ?)", ps)
    orders = []
    for o in range(1, scale_rows * 2 + 1):
        day = 1 + int(rng.integers(0, 28))
        orders.append((o, 1 + o % scale_rows, "O", float(rng.uniform(1000, 400000)),
                       f"1995-{1 + o % 12:02d}-{day:02d}", "1-URGENT", "Clerk#1", 0, "c"))
    cur.executemany("INSERT INTO orders VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)", orders)
    items = []
    for o in range(1, scale_rows * 2 + 1):
        for ln in range(1, 4):
            p, s, *_ = ps[int(rng.integers(len(ps)))]
            items.append((o, p, s, ln, float(rng.integers(1, 50)), float(rng.uniform(900, 90000)),
                          0.05, 0.02, "N", "O", "1995-06-01", "1995-06-10", "1995-06-20",
                          "NONE", "TRUCK", "c"))
    cur.executemany("INSERT INTO lineitem VALUES (" + ", ".join("?" * 16) + ")", items)
    conn.commit()


def make_tpch_sqlite(path, rows: int = 40):
    conn = sqlite3.connect(path)
    conn.executescript(TPCH_DDL)
    populate_tpch(conn, rows)
    conn.close()
    return path


USERS_ORDERS_DDL = """
CREATE TABLE users (user_id INTEGER PRIMARY KEY, user_name TEXT, age INTEGER, country TEXT);
CREATE TABLE orders (order_id INTEGER PRIMARY KEY, user_id INTEGER REFERENCES users(user_id),
    order_amount REAL, created DATE);
"""


def make_users_orders(path):
    conn = sqlite3.connect(path)
    conn.executescript(USERS_ORDERS_DDL)
    conn.executemany("INSERT INTO users VALUES (?, ?, ?, ?)",
                     [(i, f"user{i}", 18 + i % 50, ["NL", "DE", "FR"][i % 3]) for i in range(1, 101)])
    conn.executemany("INSERT INTO orders VALUES (?, ?, ?, ?)",
                     [(i, 1 + i % 100, float(i * 7 % 500), f"2024-01-{1 + i % 28:02d}") for i in range(1, 301)])
    conn.commit()
    conn.close()
    return path


IMDB_TABLES = [
    "aka_name", "aka_title", "cast_info", "char_name", "comp_cast_type", "company_name",
    "company_type", "complete_cast", "info_type", "keyword", "kind_type", "link_type",
    "movie_companies", "movie_info", "movie_info_idx", "movie_keyword", "movie_link", "name",
    "person_info", "role_type", "title",
]

IMDB_FKS = [
    ("aka_name", "person_id", "name"), ("aka_title", "movie_id", "title"),
    ("cast_info", "movie_id", "title"), ("cast_info", "person_id", "name"),
    ("cast_info", "person_role_id", "char_name"), ("cast_info", "role_id", "role_type"),
    ("complete_cast", "movie_id", "title"), ("complete_cast", "subject_id", "comp_cast_type"),
    ("movie_companies", "movie_id", "title"), ("movie_companies", "company_id", "company_name"),
    ("movie_companies", "company_type_id", "company_type"), ("movie_info", "movie_id", "title"),
    ("movie_info", "info_type_id", "info_type"), ("movie_info_idx", "movie_id", "title"),
    ("movie_info_idx", "info_type_id", "info_type"), ("movie_keyword", "movie_id", "title"),
    ("movie_keyword", "keyword_id", "keyword"), ("movie_link", "movie_id", "title"),
    ("movie_link", "link_type_id", "link_type"), ("person_info", "person_id", "name"),
    ("person_info", "info_type_id", "info_type"), ("title", "kind_id", "kind_type"),
]


def imdb_catalog() -> SchemaCatalog:
    """A 21-table catalog with the join-order-benchmark foreign keys (statistics are made up)."""
    cols: dict[str, list] = {t: [ColumnMeta("id", "integer", 1000, 1, 1000)] for t in IMDB_TABLES}
    for left, col, _right in IMDB_FKS:
        cols[left].append(ColumnMeta(col, "integer", 900, 1, 1000))
    for t in IMDB_TABLES:
        cols[t].append(ColumnMeta("note", "text", 3, None, None, ("a", "b", "c")))
        cols[t].append(ColumnMeta("production_year", "integer", 130, 1880, 2019))
    tables = [TableMeta(t, 1000, 65536, tuple(cols[t]), ("id",)) for t in IMDB_TABLES]
    edges = [JoinEdge(left, (col,), right, ("id",)) for left, col, right in IMDB_FKS]
    return SchemaCatalog(tables, edges, [])


def lab_catalog() -> SchemaCatalog:
    text = resources.files("sqlshaper").joinpath("data/lab_catalog.json").read_text()
    return SchemaCatalog.from_dict(json.loads(text))


def band_catalog() -> SchemaCatalog:
    """One table whose numeric columns cover disjoint slices of [0, 10000]."""
    def real(name, lo, hi):
        return ColumnMeta(name, "real", 100000, lo, hi)
    t = TableMeta("bands", 100000, 8_000_000, (
        ColumnMeta("id", "integer", 100000, 1, 100000),
        real("low_band", 0.0, 5999.0),
        real("mid_band", 6000.0, 7999.0),
        real("high_band", 8000.0, 9999.0),
        real("wide_band", 0.0, 9999.0),
    ), ("id",))
    return SchemaCatalog([t], [], [])


# 24 specifications and per-spec (semantic, syntax) fault counts for the mock provider.
# Every spec asks for two predicates so that each typo site exists in every draft.
SEMANTIC_FAULTS = [0] * 2 + [1] * 8 + [2] * 7 + [3] * 5 + [4] * 2
SYNTAX_FAULTS = [0] * 8 + [1] * 7 + [2] * 5 + [3] * 3 + [4] * 1


def twenty_four_specs():
    from sqlshaper.model import TemplateSpec
    specs, faults = [], {}
    extras = ["", "use a nested subquery", "use GROUP BY", ""]
    for i in range(24):
        sid = f"q{i + 1:02d}"
        instr = ["use two predicates"] + ([extras[i % 4]] if extras[i % 4] else [])
        specs.append(TemplateSpec(sid, {"num_joins": 1 + i % 2, "num_aggregations": 1 + i % 3},
                                  tuple(instr)))
        faults[sid] = (SEMANTIC_FAULTS[i], SYNTAX_FAULTS[(i * 7) % 24])
    return specs, faults


LAB_SPECS = [
    {"id": "s1", "num_joins": 1, "num_aggregations": 2},
    {"id": "s2", "num_joins": 2, "num_aggregations": 1, "nl_instructions": ["Use GROUP BY on a text column."]},
    {"id": "s3", "num_joins": 0, "num_aggregations": 1, "nl_instructions": ["Include a nested subquery."]},
    {"id": "s4", "num_joins": 1, "num_aggregations": 3, "nl_instructions": ["Use 2 predicates."]},
]


def lab_config(out, seed=7, function="identity", n=1000, bins=10, shape="uniform", **extra) -> dict:
    """Offline run configuration over the built-in lab catalog."""
    bench = {"name": "lab", "cost_type": "plan_cost", "range": [0, 10000],
             "num_queries": n, "num_intervals": bins, "shape": shape}
    if shape == "normal":
        bench.update(mean=5000, stddev=2000)
    doc = {"seed": seed, "output_dir": str(out), "catalog": "builtin:lab",
           "oracle": {"kind": "synthetic", "function": function}, "provider": {"kind": "mock"},
           "benchmark": bench, "specs": LAB_SPECS, "parallelism": 2}
    doc.update(extra)
    return doc


def write_config(path, doc) -> str:
    import yaml
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return str(path)


def load_tpch_postgres(admin_url: str, dbname: str = "sqlshaper_tpch", rows: int = 2000) -> str:
    """(Re)create ``dbname`` on the server behind ``admin_url`` with the TPC-H subset; returns its URL."""
    import psycopg
    from urllib.parse import urlparse, urlunparse

    with psycopg.connect(admin_url, autocommit=True) as c:
        c.execute(f"DROP DATABASE IF EXISTS {dbname}")
        c.execute(f"CREATE DATABASE {dbname}")
    url = urlunparse(urlparse(admin_url)._replace(path="/" + dbname))
    src = sqlite3.connect(":memory:")
    src.executescript(TPCH_DDL)
    populate_tpch(src, rows)
    with psycopg.connect(url, autocommit=True) as c:
        for stmt in TPCH_DDL.split(";"):
            if stmt.strip():
                c.execute(stmt)
        for t in ["region", "nation", "supplier", "customer", "part", "partsupp", "orders", "lineitem"]:
            data = src.execute(f"SELECT * FROM {t}").fetchall()
            marks = ", ".join(["%s"] * len(data[0]))
            with c.cursor() as cur:
                cur.executemany(f"INSERT INTO {t} VALUES ({marks})", data)
        c.execute("ANALYZE")
    return url
