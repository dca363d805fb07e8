"""Schema catalog: introspection, join graph, join-path enumeration, prompt summaries."""

from __future__ import annotations

import datetime as _dt
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .db import Database, connect
from .model import CATEGORICAL_CAP, ValueDomain

log = logging.getLogger(__name__)

TYPE_TAGS = ("integer", "real", "text", "date", "other")

# Per-k cap on enumerated join paths; beyond it paths are reservoir-sampled.
PATH_CAP = 50_000


class NoPathForJoinCount(LookupError):
    def __init__(self, k: int):
        super().__init__(f"no join path with {k} joins in the schema")
        self.k = k


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    data_type: str
    distinct_count: int = 0
    min: object = None
    max: object = None
    sample_values: tuple = ()
    nullable: bool = True

    def __post_init__(self):
        if self.data_type not in TYPE_TAGS:
            raise ValueError(f"column {self.name}: unknown type tag {self.data_type!r}")
        if self.distinct_count < 0:
            raise ValueError(f"column {self.name}: negative distinct_count")


@dataclass(frozen=True)
class TableMeta:
    name: str
    row_count: int
    size_bytes: int
    columns: tuple[ColumnMeta, ...]
    primary_key: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.row_count < 0 or self.size_bytes < 0:
            raise ValueError(f"table {self.name}: negative size")
        for c in self.columns:
            if self.row_count and c.distinct_count > self.row_count:
                raise ValueError(f"{self.name}.{c.name}: distinct_count exceeds row_count")

    def column(self, name: str) -> ColumnMeta:
        for c in self.columns:
            if c.name.lower() == name.lower():
                return c
        raise KeyError(f"{self.name}.{name}")


@dataclass(frozen=True)
class JoinEdge:
    """Foreign key ``left(left_columns) -> right(right_columns)``."""

    left: str
    left_columns: tuple[str, ...]
    right: str
    right_columns: tuple[str, ...]

    def other(self, table: str) -> str:
        return self.right if table == self.left else self.left

    def touches(self, table: str) -> bool:
        return table in (self.left, self.right)

    def condition(self, aliases: dict[str, str] | None = None) -> str:
        a = (aliases or {}).get(self.left, self.left)
        b = (aliases or {}).get(self.right, self.right)
        return " AND ".join(f"{a}.{lc} = {b}.{rc}"
                            for lc, rc in zip(self.left_columns, self.right_columns))

    def __str__(self):
        return f"{self.left}({', '.join(self.left_columns)}) -> {self.right}({', '.join(self.right_columns)})"


@dataclass(frozen=True)
class JoinPath:
    """A chain ``tables[0] -edges[0]- tables[1] - ... - tables[k]``."""

    tables: tuple[str, ...]
    edges: tuple[JoinEdge, ...] = ()

    def __post_init__(self):
        if len(self.tables) != len(self.edges) + 1:
            raise ValueError("a join path with k edges touches k + 1 tables")
        for i, e in enumerate(self.edges):
            if {e.left, e.right} != {self.tables[i], self.tables[i + 1]}:
                raise ValueError(f"edge {e} does not connect {self.tables[i]} and {self.tables[i + 1]}")

    @property
    def joins(self) -> int:
        return len(self.edges)

    @property
    def tables_touched(self) -> frozenset:
        return frozenset(self.tables)

    def describe(self) -> str:
        if not self.edges:
            return self.tables[0]
        parts = [self.tables[0]]
        for e, t in zip(self.edges, self.tables[1:]):
            parts.append(f" JOIN {t} ON {e.condition()}")
        return "".join(parts)


@dataclass
class SchemaCatalog:
    tables: list[TableMeta] = field(default_factory=list)
    join_edges: list[JoinEdge] = field(default_factory=list)
    indexes: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate table names in catalog")
        for e in self.join_edges:
            for t, cols in ((e.left, e.left_columns), (e.right, e.right_columns)):
                try:
                    tm = self.table(t)
                    for c in cols:
                        tm.column(c)
                except KeyError as err:
                    raise ValueError(f"join edge {e} references unknown {err}") from err

    def table(self, name: str) -> TableMeta:
        for t in self.tables:
            if t.name.lower() == name.lower():
                return t
        raise KeyError(name)

    def has_table(self, name: str) -> bool:
        return any(t.name.lower() == name.lower() for t in self.tables)

    def column_domain(self, table: str, column: str) -> ValueDomain | None:
        """Placeholder domain for a column, or None when the column has no usable stats."""
        t = self.table(table)
        c = t.column(column)
        return domain_for(c)

    def edges_of(self, table: str) -> list[JoinEdge]:
        return [e for e in self.join_edges if e.touches(table)]

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        def col(c: ColumnMeta):
            d = {"name": c.name, "data_type": c.data_type, "distinct_count": c.distinct_count}
            if c.min is not None:
                d["min"] = _jsonable(c.min)
                d["max"] = _jsonable(c.max)
            if c.sample_values:
                d["sample_values"] = [_jsonable(v) for v in c.sample_values]
            return d

        return {
            "tables": [
                {"name": t.name, "row_count": t.row_count, "size_bytes": t.size_bytes,
                 "primary_key": list(t.primary_key), "columns": [col(c) for c in t.columns]}
                for t in self.tables
            ],
            "join_edges": [
                {"left": e.left, "left_columns": list(e.left_columns),
                 "right": e.right, "right_columns": list(e.right_columns)}
                for e in self.join_edges
            ],
            "indexes": [{"table": t, "columns": list(cols)} for t, cols in self.indexes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaCatalog":
        tables = []
        for t in d.get("tables", []):
            cols = tuple(
                ColumnMeta(c["name"], c.get("data_type", "other"), int(c.get("distinct_count", 0)),
                           c.get("min"), c.get("max"), tuple(c.get("sample_values", ())))
                for c in t.get("columns", []))
            tables.append(TableMeta(t["name"], int(t.get("row_count", 0)), int(t.get("size_bytes", 0)),
                                    cols, tuple(t.get("primary_key", ()))))
        edges = [JoinEdge(e["left"], tuple(e["left_columns"]), e["right"], tuple(e["right_columns"]))
                 for e in d.get("join_edges", [])]
        idx = [(i["table"], tuple(i["columns"])) for i in d.get("indexes", [])]
        return cls(tables, edges, idx)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "SchemaCatalog":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _jsonable(v):
    if isinstance(v, (_dt.date, _dt.datetime)):
        return v.isoformat()
    if hasattr(v, "item"):
        return v.item()
    if isinstance(v, (int, float, str)) or v is None:
        return v
    return str(v)


def _to_ordinal(v) -> int | None:
    if isinstance(v, _dt.datetime):
        return v.date().toordinal()
    if isinstance(v, _dt.date):
        return v.toordinal()
    if isinstance(v, str):
        try:
            return _dt.date.fromisoformat(v[:10]).toordinal()
        except ValueError:
            return None
    return None


def domain_for(c: ColumnMeta) -> ValueDomain | None:
    if c.data_type in ("integer", "real") and c.min is not None and c.max is not None:
        try:
            lo, hi = float(c.min), float(c.max)
        except (TypeError, ValueError):
            return None
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            return None
        if c.data_type == "integer":
            return ValueDomain.numeric(math.floor(lo), math.floor(hi), c.distinct_count, integral=True)
        return ValueDomain.numeric(lo, hi, c.distinct_count)
    if c.data_type == "date" and c.min is not None and c.max is not None:
        lo, hi = _to_ordinal(c.min), _to_ordinal(c.max)
        if lo is None or hi is None or lo > hi:
            return None
        return ValueDomain.numeric(lo, hi, c.distinct_count, temporal=True)
    if c.sample_values:
        vals = [v for v in c.sample_values if v is not None]
        if vals:
            return ValueDomain.categorical(vals, max(c.distinct_count, len(dict.fromkeys(vals))))
    return None


# -- introspection --------------------------------------------------------

def type_tag(declared: str) -> str:
    t = (declared or "").lower()
    if any(k in t for k in ("date", "time")):
        return "date"
    if "int" in t or t in ("serial", "bigserial", "smallserial"):
        return "integer"
    if any(k in t for k in ("real", "floa", "doub", "numeric", "decimal", "money")):
        return "real"
    if any(k in t for k in ("char", "text", "clob", "string", "uuid", "name")):
        return "text"
    return "other"


def introspect(config, log_=None) -> SchemaCatalog:
    """Read the schema of the database described by ``config``.

    ``config`` is a URL string, a mapping accepted by :func:`db.connection_url`,
    or an open :class:`db.Database`. Only read-only statements are issued.
    Row and distinct counts are optimizer estimates on PostgreSQL.
    """
    from .db import connection_url

    if isinstance(config, Database):
        return _introspect(config)
    url = config if isinstance(config, str) else connection_url(config)
    with connect(url, log_) as db:
        return _introspect(db)


def _introspect(db: Database) -> SchemaCatalog:
    if db.dialect == "sqlite":
        return _introspect_sqlite(db)
    if db.dialect == "postgres":
        return _introspect_postgres(db)
    raise ValueError(f"no introspection for dialect {db.dialect}")


def _q(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _introspect_sqlite(db: Database) -> SchemaCatalog:
    names = [r[0] for r in db.query(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name")]
    tables, edges, indexes = [], [], []
    for name in names:
        info = db.query(f"PRAGMA table_info({_q(name)})")
        rows = db.query(f"SELECT COUNT(*) FROM {_q(name)}")[0][0]
        pages = 0
        cols = []
        pk = tuple(r[1] for r in sorted((r for r in info if r[5]), key=lambda r: r[5]))
        for _cid, cname, ctype, notnull, _dflt, _pk in info:
            tag = type_tag(ctype)
            dc, lo, hi = db.query(
                f"SELECT COUNT(DISTINCT {_q(cname)}), MIN({_q(cname)}), MAX({_q(cname)}) FROM {_q(name)}")[0]
            samples = ()
            if tag == "text":
                samples = tuple(r[0] for r in db.query(
                    f"SELECT DISTINCT {_q(cname)} FROM {_q(name)} WHERE {_q(cname)} IS NOT NULL "
                    f"ORDER BY {_q(cname)} LIMIT {CATEGORICAL_CAP}"))
                lo = hi = None
            elif tag == "other":
                lo = hi = None
            cols.append(ColumnMeta(cname, tag, int(dc or 0), lo, hi, samples, not notnull))
        tables.append(TableMeta(name, int(rows), pages, tuple(cols), pk))
        for fk in _group_fks(db.query(f"PRAGMA foreign_key_list({_q(name)})")):
            edges.append(fk._replace_left(name))
        for _seq, iname, *_rest in db.query(f"PRAGMA index_list({_q(name)})"):
            icols = tuple(r[2] for r in db.query(f"PRAGMA index_info({_q(iname)})"))
            indexes.append((name, icols))
    # resolve implicit FK targets (REFERENCES t without columns -> t's primary key)
    fixed = []
    bytable = {t.name: t for t in tables}
    for e in edges:
        rcols = e.right_columns
        if not all(rcols) and e.right in bytable:
            rcols = bytable[e.right].primary_key
        fixed.append(JoinEdge(e.left, e.left_columns, e.right, tuple(rcols)))
    return SchemaCatalog(tables, sorted(fixed, key=_edge_key), sorted(indexes))


class _Fk:
    def __init__(self, right, lcols, rcols):
        self.right, self.lcols, self.rcols = right, lcols, rcols

    def _replace_left(self, left):
        return JoinEdge(left, tuple(self.lcols), self.right, tuple(self.rcols))


def _group_fks(rows):
    groups: dict[int, _Fk] = {}
    for fid, _seq, table, frm, to, *_ in rows:
        g = groups.setdefault(fid, _Fk(table, [], []))
        g.lcols.append(frm)
        g.rcols.append(to)
    return [groups[k] for k in sorted(groups)]


def _edge_key(e: JoinEdge):
    return (e.left, e.left_columns, e.right, e.right_columns)


_PG_TABLES = """
SELECT c.relname::text, GREATEST(c.reltuples, 0)::bigint, pg_total_relation_size(c.oid), c.reltuples < 0
FROM pg_class c JOIN pg_namespace n ON n.oid = c.relnamespace
WHERE n.nspname = %s::text AND c.relkind IN ('r', 'p')
ORDER BY c.relname
"""

_PG_COLUMNS = """
SELECT a.attname::text, format_type(a.atttypid, a.atttypmod), NOT a.attnotnull,
       s.n_distinct, s.histogram_bounds::text::text[], s.most_common_vals::text::text[]
FROM pg_attribute a
JOIN pg_class c ON c.oid = a.attrelid
JOIN pg_namespace n ON n.oid = c.relnamespace
LEFT JOIN pg_stats s ON s.schemaname = n.nspname AND s.tablename = c.relname AND s.attname = a.attname
WHERE n.nspname = %s::text AND c.relname = %s::text AND a.attnum > 0 AND NOT a.attisdropped
ORDER BY a.attnum
"""

_PG_FKS = """
SELECT cl.relname::text, con.contype::text,
       ARRAY(SELECT a.attname::text FROM unnest(con.conkey) WITH ORDINALITY k(n, i)
             JOIN pg_attribute a ON a.attrelid = con.conrelid AND a.attnum = k.n ORDER BY k.i),
       cr.relname::text,
       ARRAY(SELECT a.attname::text FROM unnest(con.confkey) WITH ORDINALITY k(n, i)
             JOIN pg_attribute a ON a.attrelid = con.confrelid AND a.attnum = k.n ORDER BY k.i)
FROM pg_constraint con
JOIN pg_class cl ON cl.oid = con.conrelid
JOIN pg_namespace n ON n.oid = cl.relnamespace
LEFT JOIN pg_class cr ON cr.oid = con.confrelid
WHERE n.nspname = %s::text AND con.contype IN ('p', 'f')
ORDER BY cl.relname, con.conname
"""

_PG_INDEXES = """
SELECT t.relname::text,
       ARRAY(SELECT a.attname::text FROM unnest(ix.indkey) WITH ORDINALITY k(n, i)
             JOIN pg_attribute a ON a.attrelid = t.oid AND a.attnum = k.n ORDER BY k.i)
FROM pg_index ix
JOIN pg_class t ON t.oid = ix.indrelid
JOIN pg_namespace n ON n.oid = t.relnamespace
WHERE n.nspname = %s::text
ORDER BY t.relname, ix.indexrelid
"""


def _parse_bound(tag: str, v: str):
    if v is None:
        return None
    if tag == "integer":
        return int(float(v))
    if tag == "real":
        return float(v)
    return v


def _introspect_postgres(db: Database, schema: str = "public") -> SchemaCatalog:
    tables, edges, indexes = [], [], []
    pks: dict[str, tuple] = {}
    for rel, ctype, lcols, ref, rcols in db.query(_PG_FKS, (schema,)):
        if ctype == "p":
            pks[rel] = tuple(lcols)
        elif ref is not None:
            edges.append(JoinEdge(rel, tuple(lcols), ref, tuple(rcols)))
    for name, reltuples, size, never_analyzed in db.query(_PG_TABLES, (schema,)):
        rows = int(reltuples)
        if never_analyzed:
            rows = int(db.query(f"SELECT count(*) FROM {_q(schema)}.{_q(name)}")[0][0])
        cols = []
        for cname, ctype, nullable, n_distinct, hist, mcv in db.query(_PG_COLUMNS, (schema, name)):
            tag = type_tag(ctype)
            if n_distinct is None:
                dc = 0
            elif n_distinct < 0:
                dc = int(round(-n_distinct * rows))
            else:
                dc = int(n_distinct)
            lo = hi = None
            samples = ()
            bounds = [b for b in (hist or []) if b is not None]
            common = [b for b in (mcv or []) if b is not None]
            if tag in ("integer", "real", "date"):
                vals = [_parse_bound(tag, b) for b in bounds + common]
                if vals:
                    lo, hi = min(vals), max(vals)
                else:
                    lo, hi = db.query(
                        f"SELECT min({_q(cname)}), max({_q(cname)}) FROM {_q(schema)}.{_q(name)}")[0]
                if tag == "real" and lo is not None:
                    lo, hi = float(lo), float(hi)
            elif tag == "text":
                samples = tuple(sorted(dict.fromkeys(common + bounds)))[:CATEGORICAL_CAP]
                if not samples:
                    samples = tuple(r[0] for r in db.query(
                        f"SELECT DISTINCT {_q(cname)} FROM {_q(schema)}.{_q(name)} "
                        f"WHERE {_q(cname)} IS NOT NULL ORDER BY 1 LIMIT {CATEGORICAL_CAP}"))
            cols.append(ColumnMeta(cname, tag, min(dc, rows) if rows else dc, lo, hi, samples, bool(nullable)))
        tables.append(TableMeta(name, rows, int(size), tuple(cols), pks.get(name, ())))
    for rel, icols in db.query(_PG_INDEXES, (schema,)):
        indexes.append((rel, tuple(icols)))
    return SchemaCatalog(tables, sorted(edges, key=_edge_key), sorted(indexes))


# -- join paths -------------------------------------------------------------

def enumerate_join_paths(catalog: SchemaCatalog, k: int, cap: int = PATH_CAP, seed: int = 0) -> list[JoinPath]:
    """All simple chains with exactly ``k`` join edges, one per reversal pair.

    ``k == 0`` gives one single-table path per table. When more than ``cap``
    paths exist a uniform reservoir sample of ``cap`` paths is returned.
    """
    if k < 0:
        raise ValueError("join count must be >= 0")
    if k == 0:
        return [JoinPath((t.name,)) for t in catalog.tables]
    index = {id(e): i for i, e in enumerate(catalog.join_edges)}
    adj: dict[str, list[JoinEdge]] = {t.name: [] for t in catalog.tables}
    for e in catalog.join_edges:
        if e.left == e.right:
            continue  # self-reference never yields a simple path
        adj[e.left].append(e)
        adj[e.right].append(e)

    rng = np.random.default_rng(seed)
    out: list[JoinPath] = []
    seen = 0

    def emit(tables, edges):
        nonlocal seen
        fwd = (tables, tuple(index[id(e)] for e in edges))
        rev = (tables[::-1], fwd[1][::-1])
        if fwd > rev:
            return
        seen += 1
        path = JoinPath(tuple(tables), tuple(edges))
        if len(out) < cap:
            out.append(path)
        else:
            r = int(rng.integers(seen))
            if r < cap:
                out[r] = path

    def dfs(tables, edges):
        if len(edges) == k:
            emit(tuple(tables), edges)
            return
        last = tables[-1]
        for e in adj[last]:
            nxt = e.other(last)
            if nxt in tables:
                continue
            tables.append(nxt)
            edges.append(e)
            dfs(tables, edges)
            edges.pop()
            tables.pop()

    for t in catalog.tables:
        dfs([t.name], [])
    if seen > cap:
        log.warning("%d join paths with %d joins; kept a uniform sample of %d", seen, k, cap)
    return out


def sample_join_path(paths, rng) -> JoinPath:
    if not paths:
        raise NoPathForJoinCount(-1)
    return paths[int(rng.integers(len(paths)))]


# -- prompt summaries ---------------------------------------------------------

def _fmt_num(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _table_block(catalog: SchemaCatalog, t: TableMeta) -> list[str]:
    lines = [f"Table {t.name}: {t.row_count} rows, {t.size_bytes} bytes"]
    if t.primary_key:
        lines.append(f"  primary key: ({', '.join(t.primary_key)})")
    for c in t.columns:
        desc = f"  - {c.name} {c.data_type}, {c.distinct_count} distinct"
        if c.min is not None and c.max is not None:
            desc += f", range [{_fmt_num(_jsonable(c.min))}, {_fmt_num(_jsonable(c.max))}]"
        elif c.sample_values:
            shown = ", ".join(repr(v) for v in c.sample_values[:5])
            desc += f", e.g. {shown}"
        lines.append(desc)
    idx = [cols for tn, cols in catalog.indexes if tn == t.name]
    for cols in idx:
        lines.append(f"  index on ({', '.join(cols)})")
    return lines


def summarize_for_prompt(catalog: SchemaCatalog, path: JoinPath) -> str:
    """Schema text restricted to the tables and join edges of ``path``."""
    lines = []
    for name in path.tables:
        lines.extend(_table_block(catalog, catalog.table(name)))
    if path.edges:
        lines.append("Join edges:")
        lines.extend(f"  - {e.condition()}" for e in path.edges)
    return "\n".join(lines) + "\n"


def summarize_catalog(catalog: SchemaCatalog) -> str:
    lines = []
    for t in catalog.tables:
        lines.extend(_table_block(catalog, t))
    if catalog.join_edges:
        lines.append("Join edges:")
        lines.extend(f"  - {e.condition()}" for e in catalog.join_edges)
    return "\n".join(lines) + "\n"


def summarize_tables(catalog: SchemaCatalog, names) -> str:
    """Schema text for the named tables and the edges among them."""
    keep = [t for t in catalog.tables if t.name in set(names)]
    lines = []
    for t in keep:
        lines.extend(_table_block(catalog, t))
    kept = {t.name for t in keep}
    edges = [e for e in catalog.join_edges if e.left in kept and e.right in kept]
    if edges:
        lines.append("Join edges:")
        lines.extend(f"  - {e.condition()}" for e in edges)
    return "\n".join(lines) + "\n"
