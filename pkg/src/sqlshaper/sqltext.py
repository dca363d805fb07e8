"""Lightweight lexical helpers for template text: no full SQL parsing."""

from __future__ import annotations

import re

from .model import PLACEHOLDER_RE, Placeholder, SqlTemplate

AGG_RE = re.compile(r"\b(COUNT|SUM|AVG|MIN|MAX)\s*\(", re.IGNORECASE)
JOIN_RE = re.compile(r"\bJOIN\b", re.IGNORECASE)
_FENCE = re.compile(r"```(?:sql)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)
_TABLE_REF = re.compile(
    r"\b(?:FROM|JOIN)\s+([A-Za-z_][\w]*)(?:\s+(?:AS\s+)?([A-Za-z_][\w]*))?", re.IGNORECASE)
_NOT_ALIAS = {
    "WHERE", "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "CROSS", "OUTER", "ON", "GROUP", "ORDER",
    "HAVING", "LIMIT", "UNION", "NATURAL", "USING", "AND", "OR", "SELECT", "AS", "OFFSET", "WINDOW",
}
_COMPARE_TAIL = re.compile(
    r"(?:([A-Za-z_]\w*)\.)?([A-Za-z_]\w*)\s*(?:NOT\s+)?"
    r"(?:<=|>=|<>|!=|=|<|>|\bLIKE\b|\bILIKE\b|\bBETWEEN\b)\s*(?:\{\w+\}\s+AND\s+)?$",
    re.IGNORECASE,
)


class TemplateParseError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def clean_sql(text: str) -> str:
    """Strip markdown fences, surrounding prose lines and a trailing semicolon."""
    m = _FENCE.search(text)
    if m:
        text = m.group(1)
    text = text.strip()
    lines = text.splitlines()
    start = next((i for i, ln in enumerate(lines)
                  if re.match(r"\s*(SELECT|WITH|--)\b", ln, re.IGNORECASE)), 0)
    text = "\n".join(lines[start:]).strip()
    # quoted markers would double-quote string literals on instantiation
    text = re.sub(r"'(\{[A-Za-z_]\w*\})'", r"\1", text)
    return text.rstrip().rstrip(";").rstrip()


def table_refs(sql: str) -> dict[str, str]:
    """alias -> table for every FROM/JOIN reference (a bare table maps to itself)."""
    out = {}
    for m in _TABLE_REF.finditer(sql):
        table, alias = m.group(1), m.group(2)
        if table.upper() in _NOT_ALIAS or table.upper() == "SELECT":
            continue
        out[table] = table
        if alias and alias.upper() not in _NOT_ALIAS:
            out[alias] = table
    return out


def tables_accessed(sql: str) -> set[str]:
    return {t.lower() for t in table_refs(sql).values()}


def count_joins(sql: str) -> int:
    return len(JOIN_RE.findall(_strip_strings(sql)))


def count_aggregations(sql: str) -> int:
    return len(AGG_RE.findall(_strip_strings(sql)))


def _strip_strings(sql: str) -> str:
    return re.sub(r"'(?:[^']|'')*'", "''", sql)


def numeric_violations(sql: str, spec) -> list[str]:
    """Local check of the numeric constraints of ``spec`` against ``sql``."""
    out = []
    nc = spec.numeric_constraints
    if "num_joins" in nc and count_joins(sql) != nc["num_joins"]:
        out.append(f"expected {nc['num_joins']} joins, found {count_joins(sql)}")
    if "num_aggregations" in nc and count_aggregations(sql) != nc["num_aggregations"]:
        out.append(f"expected {nc['num_aggregations']} aggregations, found {count_aggregations(sql)}")
    if "num_tables_accessed" in nc and len(tables_accessed(sql)) != nc["num_tables_accessed"]:
        out.append(f"expected {nc['num_tables_accessed']} tables accessed, "
                   f"found {len(tables_accessed(sql))}")
    return out


def parse_template(text: str, catalog, template_id: str, spec_id=None, lineage=None) -> SqlTemplate:
    """Build a :class:`SqlTemplate`, binding each ``{name}`` marker to the column it is compared with."""
    sql = clean_sql(text)
    if not re.match(r"\s*(SELECT|WITH)\b", sql, re.IGNORECASE):
        raise TemplateParseError(["template must be a single SELECT statement"])
    refs = {k.lower(): v for k, v in table_refs(sql).items()}
    errors, placeholders, seen = [], [], set()
    for m in PLACEHOLDER_RE.finditer(sql):
        name = m.group(1)
        if name in seen:
            errors.append(f"placeholder {{{name}}} appears more than once")
            continue
        seen.add(name)
        tail = _COMPARE_TAIL.search(sql[: m.start()])
        if not tail:
            errors.append(f"placeholder {{{name}}} is not compared with a column")
            continue
        alias, col = tail.group(1), tail.group(2)
        table = _resolve(alias, col, refs, catalog)
        if table is None:
            errors.append(f"cannot resolve column {alias + '.' if alias else ''}{col} for {{{name}}}")
            continue
        dom = catalog.column_domain(table, col)
        if dom is None:
            errors.append(f"column {table}.{col} has no statistics usable as a value domain")
            continue
        placeholders.append(Placeholder(name, (catalog.table(table).name, catalog.table(table).column(col).name), dom))
    if errors:
        raise TemplateParseError(errors)
    return SqlTemplate(template_id, sql, tuple(placeholders), spec_id, lineage)


def _resolve(alias, col, refs, catalog):
    if alias:
        table = refs.get(alias.lower())
        if table is None and catalog.has_table(alias):
            table = alias
        if table is None or not catalog.has_table(table):
            return None
        try:
            catalog.table(table).column(col)
        except KeyError:
            return None
        return table
    hits = []
    for table in dict.fromkeys(refs.values()):
        if not catalog.has_table(table):
            continue
        try:
            catalog.table(table).column(col)
            hits.append(table)
        except KeyError:
            pass
    return hits[0] if len(hits) == 1 else None
