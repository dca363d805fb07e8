"""Read-only database access with a statement log (SQLite and PostgreSQL)."""

from __future__ import annotations

import logging
import re
import sqlite3
import threading
from urllib.parse import urlparse

log = logging.getLogger(__name__)

_MUTATING = re.compile(
    r"\b(INSERT|UPDATE|DELETE|MERGE|DROP|CREATE|ALTER|TRUNCATE|GRANT|REVOKE|COPY|VACUUM|ANALYZE|"
    r"REINDEX|CLUSTER|CALL|REFRESH|ATTACH|DETACH)\b",
    re.IGNORECASE,
)
_ALLOWED_HEAD = ("SELECT", "WITH", "EXPLAIN", "VALUES", "PRAGMA", "SHOW", "TABLE")
_STRING = re.compile(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"")
_COMMENT = re.compile(r"--[^\n]*|/\*.*?\*/", re.DOTALL)


class ConnectionFailed(RuntimeError):
    pass


class PermissionDenied(RuntimeError):
    pass


class MutatingStatement(RuntimeError):
    """Raised before a statement that could modify the database is sent."""


def strip_literals(sql: str) -> str:
    return _STRING.sub("''", _COMMENT.sub(" ", sql))


def is_read_only(sql: str) -> bool:
    body = strip_literals(sql).strip().rstrip(";").strip()
    if not body or ";" in body:
        return False
    head = body.split(None, 1)[0].upper()
    if head not in _ALLOWED_HEAD:
        return False
    if head == "EXPLAIN" and re.search(r"\bANALY[SZ]E\b", body[:60], re.IGNORECASE):
        return False
    if head == "PRAGMA":
        # table_info / foreign_key_list / index_list etc. only; no assignments
        return "=" not in body
    return _MUTATING.search(body) is None


class StatementLog:
    """Thread-safe list of every statement sent to a database."""

    def __init__(self):
        self._lock = threading.Lock()
        self.statements: list[str] = []

    def append(self, sql: str):
        with self._lock:
            self.statements.append(sql)

    def mutating(self) -> list[str]:
        return [s for s in self.statements if not is_read_only(s)]

    def __len__(self):
        return len(self.statements)


class Database:
    """A read-only connection. ``query`` returns a list of tuples."""

    dialect = "generic"

    def __init__(self, log_: StatementLog | None = None):
        self.log = log_ if log_ is not None else StatementLog()
        self._lock = threading.Lock()

    def query(self, sql: str, params=()) -> list[tuple]:
        if not is_read_only(sql):
            raise MutatingStatement(sql)
        self.log.append(sql)
        with self._lock:
            return self._run(sql, params)

    def _run(self, sql, params):  # pragma: no cover - abstract
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SqliteDatabase(Database):
    dialect = "sqlite"

    def __init__(self, path: str, log_: StatementLog | None = None):
        super().__init__(log_)
        try:
            uri = f"file:{path}?mode=ro" if path != ":memory:" else ":memory:"
            self.conn = sqlite3.connect(uri, uri=path != ":memory:", check_same_thread=False)
            self.conn.execute("SELECT 1")
        except sqlite3.Error as e:
            raise ConnectionFailed(f"cannot open sqlite database {path}: {e}") from e

    def _run(self, sql, params):
        try:
            return self.conn.execute(sql, params).fetchall()
        except sqlite3.DatabaseError as e:
            if "not authorized" in str(e):
                raise PermissionDenied(str(e)) from e
            raise

    def close(self):
        self.conn.close()


class PostgresDatabase(Database):
    dialect = "postgres"

    def __init__(self, url: str, log_: StatementLog | None = None, connect_timeout: int = 10,
                 statement_timeout_ms: int | None = None):
        super().__init__(log_)
        try:
            import psycopg
        except ImportError as e:  # pragma: no cover - depends on extras
            raise ConnectionFailed("psycopg is not installed (pip install 'artifact[postgres]')") from e
        self._errors = psycopg.errors
        try:
            self.conn = psycopg.connect(
                url, autocommit=True, connect_timeout=connect_timeout,
                # SQL_ASCII servers would otherwise hand back text as bytes
                options="-c default_transaction_read_only=on -c client_encoding=UTF8"
                + (f" -c statement_timeout={int(statement_timeout_ms)}" if statement_timeout_ms else ""))
        except psycopg.OperationalError as e:
            msg = str(e)
            if "permission denied" in msg or "authentication failed" in msg:
                raise PermissionDenied(msg) from e
            raise ConnectionFailed(msg) from e

    def _run(self, sql, params):
        try:
            with self.conn.cursor() as cur:
                cur.execute(sql, params or None)
                return cur.fetchall() if cur.description else []
        except self._errors.InsufficientPrivilege as e:
            raise PermissionDenied(str(e)) from e

    def close(self):
        self.conn.close()


def connect(url: str, log_: StatementLog | None = None, **kw) -> Database:
    """Open ``sqlite:///path`` or ``postgresql://...`` read-only."""
    parsed = urlparse(url)
    if parsed.scheme == "sqlite":
        # sqlite:///relative.db, sqlite:////absolute/path.db
        path = url[len("sqlite:///"):]
        return SqliteDatabase(path or ":memory:", log_)
    if parsed.scheme in ("postgres", "postgresql"):
        return PostgresDatabase(url, log_, **kw)
    raise ConnectionFailed(f"unsupported database url {url!r}")


def connection_url(cfg: dict) -> str:
    """Build a URL from ``{url}`` or ``{host, port, database, user, password}``."""
    if cfg.get("url"):
        return cfg["url"]
    from urllib.parse import quote
    user = quote(str(cfg.get("user", "postgres")))
    pw = cfg.get("password")
    auth = f"{user}:{quote(str(pw))}@" if pw else f"{user}@"
    return f"postgresql://{auth}{cfg.get('host', 'localhost')}:{cfg.get('port', 5432)}/{cfg.get('database', 'postgres')}"
