"""Cost oracles: PostgreSQL EXPLAIN and deterministic synthetic cost surfaces."""

from __future__ import annotations

import datetime as _dt
import math
import re
import sqlite3
import threading

from .db import StatementLog, connect, is_read_only
from .model import COST_METRICS, PLACEHOLDER_RE, CostValue


class OracleUnavailable(RuntimeError):
    """The oracle cannot be reached at all; fatal for a run."""


class QueryFailed(RuntimeError):
    """A single statement could not be costed."""


class CostOracle:
    """Validates and costs SQL statements without modifying the database.

    Subclasses implement ``_validate`` and ``_cost``. Results are cached per
    statement text so repeated evaluation within a run is stable.
    """

    def __init__(self, metric: str = "plan_cost"):
        if metric not in COST_METRICS:
            raise ValueError(f"metric must be one of {COST_METRICS}")
        self.metric = metric
        self.log = StatementLog()
        self.evaluations = 0
        self._cache: dict[str, float] = {}
        self._lock = threading.Lock()

    def validate(self, sql: str) -> tuple[bool, list[str]]:
        if PLACEHOLDER_RE.search(sql):
            return False, ["statement still contains placeholder markers"]
        if not is_read_only(sql):
            return False, ["only a single read-only SELECT statement is allowed"]
        return self._validate(sql)

    def evaluate(self, sql: str) -> CostValue:
        if not is_read_only(sql):
            raise QueryFailed("refusing to cost a statement that is not a single read-only query")
        with self._lock:
            self.evaluations += 1
            hit = self._cache.get(sql)
        if hit is None:
            hit = float(self._cost(sql))
            if not math.isfinite(hit) or hit < 0:
                raise QueryFailed(f"oracle produced invalid cost {hit}")
            with self._lock:
                self._cache[sql] = hit
        return CostValue(self.metric, hit)

    def _validate(self, sql):  # pragma: no cover - abstract
        raise NotImplementedError

    def _cost(self, sql):  # pragma: no cover - abstract
        raise NotImplementedError

    def close(self):
        pass


# -- synthetic -------------------------------------------------------------

_NUM = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?(?![\w.])")
_STR = re.compile(r"'((?:[^']|'')*)'")
_ISO = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def literal_vector(sql: str) -> list[float]:
    """Numeric literals of a statement in textual order; ISO dates count as ordinal days."""
    found = []
    for m in _STR.finditer(sql):
        s = m.group(1)
        if _ISO.match(s):
            found.append((m.start(), float(_dt.date.fromisoformat(s).toordinal())))
    masked = _STR.sub(lambda m: " " * len(m.group(0)), sql)
    found.extend((m.start(), float(m.group(0))) for m in _NUM.finditer(masked))
    return [v for _, v in sorted(found)]


def _constant(v, value=42.0):
    return value


def _identity(v, scale=1.0, offset=0.0):
    return offset + scale * v[0] if v else offset


def _linear(v, weights=(1.0,), intercept=0.0):
    return intercept + sum(w * x for w, x in zip(weights, v))


def _step(v, width=100.0, scale=1.0):
    return scale * width * math.floor(v[0] / width) if v else 0.0


def _multimodal(v, center=5000.0, amplitude=5000.0, period=2500.0):
    if not v:
        return center
    return center + amplitude * math.sin(2 * math.pi * v[0] / period)


SYNTHETIC_FUNCTIONS = {
    "constant": _constant,
    "identity": _identity,
    "linear": _linear,
    "step": _step,
    "multimodal": _multimodal,
}


class SyntheticOracle(CostOracle):
    """Cost as a fixed function of the statement's literal values.

    ``identity`` returns the first literal, ``step`` floors it to a grid,
    ``multimodal`` maps it through a sine, ``linear`` weights all literals and
    ``constant`` ignores them. Negative results clamp to zero.

    With a catalog, validation prepares the statement against an empty
    in-memory SQLite copy of the schema, which catches syntax errors and
    unknown tables or columns.
    """

    def __init__(self, function: str = "identity", metric: str = "plan_cost", catalog=None, **params):
        super().__init__(metric)
        if function not in SYNTHETIC_FUNCTIONS:
            raise ValueError(f"unknown synthetic function {function!r}")
        self.function = function
        self.params = params
        self._fn = SYNTHETIC_FUNCTIONS[function]
        self._shadow = _shadow_schema(catalog) if catalog is not None else None
        self._shadow_lock = threading.Lock()

    def _validate(self, sql):
        self.log.append("EXPLAIN " + sql)
        if self._shadow is None:
            if not re.match(r"\s*(SELECT|WITH)\b", sql, re.IGNORECASE):
                return False, ["statement must start with SELECT or WITH"]
            if sql.count("(") != sql.count(")"):
                return False, ["unbalanced parentheses"]
            return True, []
        try:
            with self._shadow_lock:
                self._shadow.execute("EXPLAIN " + sql)
        except sqlite3.Error as e:
            return False, [str(e)]
        return True, []

    def _cost(self, sql):
        self.log.append("EXPLAIN " + sql)
        return max(0.0, float(self._fn(literal_vector(sql), **self.params)))


def _shadow_schema(catalog) -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:", check_same_thread=False)
    for t in catalog.tables:
        cols = ", ".join(f'"{c.name}"' for c in t.columns) or '"_dummy"'
        conn.execute(f'CREATE TABLE "{t.name}" ({cols})')
    return conn


# -- PostgreSQL --------------------------------------------------------------

class PostgresExplainOracle(CostOracle):
    """Optimizer estimates from ``EXPLAIN (FORMAT JSON)``: root total cost or root row estimate."""

    def __init__(self, url: str, metric: str = "plan_cost", statement_timeout_ms: int = 30000):
        super().__init__(metric)
        from .db import ConnectionFailed
        try:
            self.db = connect(url, self.log, statement_timeout_ms=statement_timeout_ms)
        except ConnectionFailed as e:
            raise OracleUnavailable(str(e)) from e
        if self.db.dialect != "postgres":
            raise OracleUnavailable("the EXPLAIN oracle needs a PostgreSQL connection")

    def _run(self, sql):
        import psycopg
        try:
            return self.db.query(sql)
        except psycopg.OperationalError as e:
            if self.db.conn.closed:
                raise OracleUnavailable(str(e)) from e
            raise QueryFailed(str(e)) from e
        except psycopg.Error as e:
            raise QueryFailed(str(e).strip()) from e

    def _validate(self, sql):
        try:
            self._run("EXPLAIN " + sql)
        except QueryFailed as e:
            return False, [str(e)]
        return True, []

    def _cost(self, sql):
        rows = self._run("EXPLAIN (FORMAT JSON) " + sql)
        return extract_plan_cost(rows[0][0], self.metric)

    def close(self):
        self.db.close()


def extract_plan_cost(plan_doc, metric: str) -> float:
    """Root ``Total Cost`` or ``Plan Rows`` from a JSON-format plan document."""
    import json
    if isinstance(plan_doc, str):
        plan_doc = json.loads(plan_doc)
    if isinstance(plan_doc, list):
        plan_doc = plan_doc[0]
    root = plan_doc["Plan"]
    return float(root["Total Cost"] if metric == "plan_cost" else root["Plan Rows"])


def make_oracle(cfg: dict, catalog=None, metric: str | None = None) -> CostOracle:
    """Build an oracle from a config block ``{kind: synthetic|postgres_explain, ...}``."""
    cfg = dict(cfg or {})
    kind = cfg.pop("kind", "synthetic")
    metric = metric or cfg.pop("metric", "plan_cost")
    cfg.pop("metric", None)
    if kind == "synthetic":
        fn = cfg.pop("function", "identity")
        return SyntheticOracle(fn, metric, catalog, **cfg)
    if kind == "postgres_explain":
        from .db import connection_url
        return PostgresExplainOracle(connection_url(cfg), metric,
                                     int(cfg.get("statement_timeout_ms", 30000)))
    raise ValueError(f"unknown oracle kind {kind!r}")
