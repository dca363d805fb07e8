"""LLM providers: a deterministic grammar-based mock and an HTTP chat-completion client."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import JoinEdge, JoinPath, SchemaCatalog
from .model import PLACEHOLDER_RE, TemplateSpec
from .sqltext import (AGG_RE, clean_sql, count_aggregations, numeric_violations, table_refs,
                      tables_accessed)

log = logging.getLogger(__name__)


class ProviderFailure(RuntimeError):
    pass


def approx_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


SYSTEM_PROMPT = ("You are an expert SQL engineer who writes PostgreSQL query templates for "
                 "database benchmarking. Reply with SQL only unless asked for JSON.")


def semantics_prompt(sql: str, spec: TemplateSpec) -> str:
    return (
        "Check whether the SQL template satisfies every constraint of the specification.\n\n"
        f"### Specification\n{_spec_text(spec)}\n\n### Template\n{sql}\n\n"
        'Reply with JSON only: {"satisfied": true|false, "violations": ["..."]}'
    )


def fix_semantics_prompt(sql: str, spec: TemplateSpec, violations: list[str]) -> str:
    return (
        "Rewrite the SQL template so that it satisfies the specification. Keep the "
        "{p_i} placeholder markers for predicate values.\n\n"
        f"### Specification\n{_spec_text(spec)}\n\n### Template\n{sql}\n\n"
        "### Violations\n" + "\n".join(f"- {v}" for v in violations) +
        "\n\nReturn exactly one SQL statement and nothing else."
    )


def fix_execution_prompt(sql: str, errors: list[str]) -> str:
    return (
        "The database rejected this SQL template (placeholders were filled with sample values). "
        "Fix the errors and keep the {p_i} placeholder markers.\n\n"
        f"### Template\n{sql}\n\n### Database errors\n" + "\n".join(f"- {e}" for e in errors) +
        "\n\nReturn exactly one SQL statement and nothing else."
    )


def refine_prompt(sql: str, costs, interval, history=None, context: str = "") -> str:
    lo, hi = interval
    c = np.asarray(costs, dtype=float)
    if len(c):
        stats = f"min {c.min():.6g}, mean {c.mean():.6g}, max {c.max():.6g} over {len(c)} queries"
        qs = np.quantile(c, [0.1, 0.25, 0.5, 0.75, 0.9])
        stats += "\nquantiles 10/25/50/75/90%: " + ", ".join(f"{q:.6g}" for q in qs)
    else:
        stats = "no successful queries"
    parts = [
        "Rewrite the SQL template so that its instantiated queries have costs inside the target "
        "interval. You may change predicates, columns, joins or aggregations, but keep the "
        "{p_i} placeholder markers for predicate values.",
        f"### Target cost interval\n[{lo:.6g}, {hi:.6g})",
        f"### Template\n{sql}",
        f"### Observed costs of this template\n{stats}",
    ]
    if context:
        parts.append(f"### Database schema\n{context.rstrip()}")
    if history:
        lines = []
        for h_sql, h_costs in history:
            hc = np.asarray(h_costs, dtype=float)
            summary = (f"min {hc.min():.6g}, mean {hc.mean():.6g}, max {hc.max():.6g}"
                       if len(hc) else "no successful queries")
            lines.append(f"-- costs: {summary}\n{h_sql}")
        parts.append("### Earlier rewrites for this interval\n" + "\n\n".join(lines))
    parts.append("Return exactly one SQL statement and nothing else.")
    return "\n\n".join(parts)


def _spec_text(spec: TemplateSpec) -> str:
    nums = json.dumps(dict(sorted(spec.numeric_constraints.items())))
    lines = [f"Specification id: {spec.id}", f"Numeric constraints (JSON): {nums}"]
    if spec.nl_instructions:
        lines.append("Instructions:")
        lines.extend(f"- {s}" for s in spec.nl_instructions)
    return "\n".join(lines)


@dataclass
class CallRecord:
    op: str
    prompt_tokens: int
    completion_tokens: int


class LlmProvider:
    """Interface used by template generation and refinement.

    Subclasses implement :meth:`complete`; the structured operations format a
    prompt and parse the reply. Token counters cover every call.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.calls: list[CallRecord] = []
        self.prompt_tokens = 0
        self.completion_tokens = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def _count(self, op: str, prompt: str, reply: str, usage: dict | None = None):
        pt = (usage or {}).get("prompt_tokens") or approx_tokens(SYSTEM_PROMPT + prompt)
        ct = (usage or {}).get("completion_tokens") or approx_tokens(reply)
        with self._lock:
            self.calls.append(CallRecord(op, int(pt), int(ct)))
            self.prompt_tokens += int(pt)
            self.completion_tokens += int(ct)

    def token_report(self) -> dict:
        by_op: dict[str, int] = {}
        for c in self.calls:
            by_op[c.op] = by_op.get(c.op, 0) + c.prompt_tokens + c.completion_tokens
        return {"calls": len(self.calls), "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens, "total_tokens": self.total_tokens,
                "by_operation": dict(sorted(by_op.items()))}

    def complete(self, op: str, prompt: str) -> str:  # pragma: no cover - abstract
        raise NotImplementedError

    # structured operations --------------------------------------------------
    def generate(self, prompt: str) -> str:
        return clean_sql(self.complete("generate", prompt))

    def validate_semantics(self, template, spec: TemplateSpec) -> tuple[bool, list[str]]:
        reply = self.complete("validate_semantics", semantics_prompt(_text(template), spec))
        return parse_validation(reply)

    def fix_semantics(self, template, spec: TemplateSpec, violations: list[str]) -> str:
        return clean_sql(self.complete("fix_semantics",
                                       fix_semantics_prompt(_text(template), spec, violations)))

    def fix_execution(self, template, errors: list[str]) -> str:
        return clean_sql(self.complete("fix_execution", fix_execution_prompt(_text(template), errors)))

    def refine_template(self, template, costs, interval, history=None, context: str = "") -> str:
        hist = [(_text(t), c) for t, c in (history or [])]
        return clean_sql(self.complete("refine_template",
                                       refine_prompt(_text(template), costs, interval, hist, context)))


def _text(template) -> str:
    return template if isinstance(template, str) else template.sql_text


def parse_validation(reply: str) -> tuple[bool, list[str]]:
    m = re.search(r"\{.*\}", reply, re.DOTALL)
    if not m:
        raise ProviderFailure(f"validation reply is not JSON: {reply[:200]!r}")
    try:
        doc = json.loads(m.group(0))
    except json.JSONDecodeError as e:
        raise ProviderFailure(f"validation reply is not JSON: {e}") from e
    sat = bool(doc.get("satisfied"))
    viol = [str(v) for v in doc.get("violations") or []]
    return sat and not viol, viol


# -- live HTTP provider -----------------------------------------------------

class LiveProvider(LlmProvider):
    """OpenAI-compatible chat completions with an on-disk reply cache keyed by prompt hash."""

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 timeout: float = 120.0, cache_dir: str | Path | None = None, client=None):
        super().__init__()
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._client = client

    def _messages(self, prompt):
        return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": prompt}]

    def complete(self, op: str, prompt: str) -> str:
        body = {"model": self.model, "messages": self._messages(prompt)}
        key = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
        cached = self.cache_dir / f"{key}.json" if self.cache_dir else None
        if cached and cached.exists():
            doc = json.loads(cached.read_text())
        else:
            doc = self._post(body)
            if cached:
                cached.write_text(json.dumps(doc, sort_keys=True))
        try:
            reply = doc["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise ProviderFailure(f"malformed completion response: {e}") from e
        self._count(op, prompt, reply, doc.get("usage"))
        return reply

    def _post(self, body) -> dict:
        import httpx
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderFailure(f"environment variable {self.api_key_env} is not set")
        client = self._client or httpx.Client(timeout=self.timeout)
        try:
            r = client.post(f"{self.endpoint}/chat/completions", json=body,
                            headers={"Authorization": f"Bearer {key}"})
            r.raise_for_status()
            return r.json()
        except httpx.HTTPError as e:
            raise ProviderFailure(f"completion request failed: {e}") from e
        finally:
            if self._client is None:
                client.close()


# -- mock provider -----------------------------------------------------------

# Keyword typos that break parsing without changing join, table or aggregate counts.
_TYPOS = [("SELECT ", "SELCT "), ("WHERE ", "WHRE "), (" ON ", " NO "), (" AND ", " ADN "),
          (" AS t1", " AS AS t1")]
_AGGS = ("SUM", "AVG", "MIN", "MAX")
_NUM_WORDS = {"one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6}


@dataclass
class _Draft:
    """The mock's private state for one specification."""

    spec: TemplateSpec
    path: JoinPath
    seed: int
    semantic_faults: int = 0
    syntax_faults: list = field(default_factory=list)
    sql: str = ""


def _instruction_flags(spec: TemplateSpec) -> dict:
    flags = {"nested": False, "group_by": False, "num_predicates": None, "no_group_by": False}
    for s in spec.nl_instructions:
        low = s.lower()
        if "nested" in low or "subquer" in low:
            flags["nested"] = not re.search(r"\bno(t)?\b.*(nested|subquer)", low)
        if "group by" in low:
            if re.search(r"\b(no|not|without)\b", low):
                flags["no_group_by"] = True
            else:
                flags["group_by"] = True
        if "predicate" in low or "placeholder" in low:
            m = re.search(r"(\d+)", low)
            if m:
                flags["num_predicates"] = int(m.group(1))
            else:
                for w, v in _NUM_WORDS.items():
                    if re.search(rf"\b{w}\b", low):
                        flags["num_predicates"] = v
                        break
    return flags


def instruction_violations(sql: str, spec: TemplateSpec) -> list[str]:
    """Keyword-level check of the natural-language instructions the mock understands."""
    f = _instruction_flags(spec)
    out = []
    upper = sql.upper()
    if f["nested"] and "(SELECT" not in re.sub(r"\(\s+SELECT", "(SELECT", upper):
        out.append("the template must contain a nested subquery")
    if f["group_by"] and "GROUP BY" not in upper:
        out.append("the template must use GROUP BY")
    if f["no_group_by"] and "GROUP BY" in upper:
        out.append("the template must not use GROUP BY")
    if f["num_predicates"] is not None:
        n = len(set(PLACEHOLDER_RE.findall(sql)))
        if n != f["num_predicates"]:
            out.append(f"expected {f['num_predicates']} predicate values, found {n}")
    return out


class MockProvider(LlmProvider):
    """Deterministic offline stand-in for an LLM.

    Drafts are produced by a small grammar over the catalog: a chain of joins
    along the prompt's join path, aggregates, optional GROUP BY and nested
    subquery, and placeholder predicates on columns with value domains.
    Replies depend only on ``seed`` and the request, never on call order.

    ``faults`` maps a spec id to ``(semantic, syntax)`` fault counts: the first
    draft for that spec carries that many surplus aggregates and keyword typos,
    and each fix call repairs one of them.

    ``refine_script(template_text, interval)`` may return replacement SQL for
    refinement requests; otherwise a refinement swaps the first predicate to
    the numeric column whose range best overlaps the target interval.
    """

    def __init__(self, catalog: SchemaCatalog, seed: int = 0, faults: dict | None = None,
                 refine_script=None):
        super().__init__()
        self.catalog = catalog
        self.seed = int(seed)
        self.faults = dict(faults or {})
        self.refine_script = refine_script
        self._drafts: dict[str, _Draft] = {}

    # the mock answers structured requests directly; complete() is not used
    def complete(self, op, prompt):  # pragma: no cover
        raise ProviderFailure("MockProvider answers structured operations only")

    def _rng(self, *parts) -> np.random.Generator:
        h = hashlib.sha256(json.dumps([self.seed, *parts], default=str).encode()).digest()
        return np.random.default_rng(int.from_bytes(h[:8], "little"))

    def generate(self, prompt: str) -> str:
        spec, path = self._parse_prompt(prompt)
        seed = int(self._rng("draft", prompt).integers(2**62))
        sem, syn = self.faults.get(spec.id, (0, 0))
        draft = _Draft(spec, path, seed, semantic_faults=sem)
        draft.sql = self._render(draft)
        draft.syntax_faults = self._pick_typos(draft.sql, syn)
        with self._lock:
            self._drafts[spec.id] = draft
        reply = self._apply_typos(draft)
        self._count("generate", prompt, reply)
        return reply

    def validate_semantics(self, template, spec):
        sql = _text(template)
        viol = numeric_violations(sql, spec) + instruction_violations(sql, spec)
        self._count("validate_semantics", semantics_prompt(sql, spec),
                    json.dumps({"satisfied": not viol, "violations": viol}))
        return not viol, viol

    def fix_semantics(self, template, spec, violations):
        sql = _text(template)
        draft = self._drafts.get(spec.id)
        if draft is None:
            reply = sql
        else:
            if draft.semantic_faults > 0:
                draft.semantic_faults -= 1
            else:
                draft.seed += 1
            keep = len(draft.syntax_faults)
            draft.sql = self._render(draft)
            draft.syntax_faults = self._pick_typos(draft.sql, keep)
            reply = self._apply_typos(draft)
        self._count("fix_semantics", fix_semantics_prompt(sql, spec, violations), reply)
        return reply

    def fix_execution(self, template, errors):
        sql = _text(template)
        spec_id = getattr(template, "spec_id", None)
        draft = self._drafts.get(spec_id) if spec_id else self._find_draft(sql)
        if draft is None:
            reply = sql
            for good, bad in _TYPOS:
                if bad in reply:
                    reply = reply.replace(bad, good, 1)
                    break
        else:
            if draft.syntax_faults:
                draft.syntax_faults.pop(0)
            else:
                draft.seed += 1
                draft.sql = self._render(draft)
            reply = self._apply_typos(draft)
        self._count("fix_execution", fix_execution_prompt(sql, errors), reply)
        return reply

    def refine_template(self, template, costs, interval, history=None, context=""):
        sql = _text(template)
        reply = None
        if self.refine_script is not None:
            reply = self.refine_script(sql, interval)
        if reply is None:
            reply = self._swap_column(sql, interval)
        hist = [(_text(t), c) for t, c in (history or [])]
        self._count("refine_template", refine_prompt(sql, costs, interval, hist, context), reply)
        return reply

    # -- internals ------------------------------------------------------------
    def _find_draft(self, sql):
        for d in self._drafts.values():
            if self._apply_typos(d) == sql:
                return d
        return None

    def _parse_prompt(self, prompt: str) -> tuple[TemplateSpec, JoinPath]:
        m = re.search(r"Specification id: (\S+)", prompt)
        spec_id = m.group(1) if m else "spec"
        m = re.search(r"Numeric constraints \(JSON\): (\{.*?\})", prompt)
        nums = json.loads(m.group(1)) if m else {}
        instr = []
        m = re.search(r"Instructions:\n((?:- .*\n?)+)", prompt)
        if m:
            instr = [ln[2:].strip() for ln in m.group(1).splitlines() if ln.startswith("- ")]
        spec = TemplateSpec(spec_id, nums, tuple(instr)) if (nums or instr) else TemplateSpec(
            spec_id, {"num_joins": 0})
        tables = re.findall(r"^Path table: (\S+)$", prompt, re.MULTILINE)
        edges = []
        for line in re.findall(r"^Path edge: (.+)$", prompt, re.MULTILINE):
            left, lcols, right, rcols = re.match(r"(\w+)\(([^)]*)\) -> (\w+)\(([^)]*)\)", line).groups()
            edges.append(JoinEdge(left, tuple(c.strip() for c in lcols.split(",")),
                                  right, tuple(c.strip() for c in rcols.split(","))))
        if not tables:
            raise ProviderFailure("prompt carries no join path")
        return spec, JoinPath(tuple(tables), tuple(edges))

    def _pick_typos(self, sql: str, count: int) -> list:
        out = []
        for good, bad in _TYPOS:
            if len(out) >= count:
                break
            if good in sql:
                out.append((good, bad))
        if len(out) < count:
            log.warning("mock could inject only %d of %d syntax faults", len(out), count)
        return out

    def _apply_typos(self, draft: _Draft) -> str:
        sql = draft.sql
        for good, bad in draft.syntax_faults:
            sql = sql.replace(good, bad, 1)
        return sql

    def _render(self, draft: _Draft) -> str:
        rng = np.random.default_rng(draft.seed)
        spec, path = draft.spec, draft.path
        flags = _instruction_flags(spec)
        nc = spec.numeric_constraints
        alias = {t: f"t{i + 1}" for i, t in enumerate(path.tables)}
        cols = {t: self.catalog.table(t).columns for t in path.tables}
        ranged = [(t, c) for t in path.tables for c in cols[t]
                  if c.data_type in ("integer", "real") and c.min is not None and c.max is not None]
        textual = [(t, c) for t in path.tables for c in cols[t] if c.data_type in ("text", "integer")]

        group = []
        if flags["group_by"]:
            keyed = [tc for tc in textual if tc[1].data_type == "text"] or textual or ranged
            if keyed:
                t, c = keyed[int(rng.integers(len(keyed)))]
                group = [f"{alias[t]}.{c.name}"]
        n_agg = nc.get("num_aggregations", 1 if flags["group_by"] else 0)
        select = list(group)
        for i in range(n_agg):
            if ranged and i % 3 != 0:
                t, c = ranged[int(rng.integers(len(ranged)))]
                select.append(f"{_AGGS[i % len(_AGGS)]}({alias[t]}.{c.name}) AS agg_{i + 1}")
            else:
                select.append(f"COUNT(*) AS agg_{i + 1}")
        for i in range(draft.semantic_faults):
            select.append(f"COUNT(*) AS extra_{i + 1}")
        if not select:
            t = path.tables[0]
            shown = [c.name for c in cols[t]][:3] or ["*"]
            select = [f"{alias[t]}.{c}" if c != "*" else "*" for c in shown]

        sql = "SELECT " + ", ".join(select) + f"\nFROM {path.tables[0]} AS {alias[path.tables[0]]}"
        for e, t in zip(path.edges, path.tables[1:]):
            sql += f"\nJOIN {t} AS {alias[t]} ON {e.condition(alias)}"

        n_pred = flags["num_predicates"] or 1
        preds, k = [], 0
        want_extra_tables = max(0, nc.get("num_tables_accessed", len(path.tables)) - len(path.tables))
        nested = flags["nested"] or want_extra_tables > 0
        n_outer = n_pred - 1 if nested and n_pred > 1 else (n_pred if not nested else 0)
        pool = list(ranged)
        if pool:
            order = rng.permutation(len(pool))
            for i in range(n_outer):
                t, c = pool[int(order[i % len(pool)])]
                k += 1
                op = ("<=", ">=")[int(rng.integers(2))] if i else "<="
                preds.append(f"{alias[t]}.{c.name} {op} {{p_{k}}}")
        if nested:
            sub = self._subquery(path, alias, rng, k + 1, want_extra_tables)
            if sub:
                preds.append(sub)
                k += 1
        if preds:
            sql += "\nWHERE " + "\n  AND ".join(preds)
        if group:
            sql += "\nGROUP BY " + ", ".join(group)
        return sql

    def _subquery(self, path, alias, rng, pnum, extra_tables):
        """``outer.col IN (SELECT ... WHERE inner.num >= {p})`` on a neighbouring table when one is wanted."""
        on_path = set(path.tables)
        if extra_tables > 0:
            for e in self.catalog.join_edges:
                for here, there, hcols, tcols in ((e.left, e.right, e.left_columns, e.right_columns),
                                                  (e.right, e.left, e.right_columns, e.left_columns)):
                    if here in on_path and there not in on_path:
                        num = self._ranged_col(there)
                        if num:
                            return (f"{alias[here]}.{hcols[0]} IN (SELECT s.{tcols[0]} FROM {there} AS s "
                                    f"WHERE s.{num} >= {{p_{pnum}}})")
        t = path.tables[0]
        num = self._ranged_col(t)
        key = self.catalog.table(t).columns[0].name
        if num is None:
            return None
        return (f"{alias[t]}.{key} IN (SELECT s.{key} FROM {t} AS s "
                f"WHERE s.{num} >= {{p_{pnum}}})")

    def _ranged_col(self, table):
        for c in self.catalog.table(table).columns:
            if c.data_type in ("integer", "real") and c.min is not None and c.max is not None:
                return c.name
        return None

    def _swap_column(self, sql: str, interval) -> str:
        """Point the first placeholder predicate at the column whose range best overlaps ``interval``."""
        refs = table_refs(sql)
        m = PLACEHOLDER_RE.search(sql)
        if not m:
            return sql
        head = sql[: m.start()]
        cm = re.search(r"(\w+)\.(\w+)\s*(<=|>=|<>|!=|=|<|>)\s*$", head)
        if not cm:
            return sql
        lo, hi = interval
        best, best_score = None, 0.0
        for al, table in sorted(refs.items()):
            if al == table and any(a != t and t == table for a, t in refs.items()):
                continue
            if not self.catalog.has_table(table):
                continue
            for c in self.catalog.table(table).columns:
                if c.data_type not in ("integer", "real") or c.min is None or c.max is None:
                    continue
                cmin, cmax = float(c.min), float(c.max)
                overlap = max(0.0, min(cmax, hi) - max(cmin, lo))
                if overlap <= 0:
                    continue
                score = overlap / max(cmax - cmin, 1e-9) + overlap / max(hi - lo, 1e-9)
                if score > best_score:
                    best, best_score = (al, c.name), score
        if best is None:
            return sql
        repl = f"{best[0]}.{best[1]} >= "
        return head[: cm.start()] + repl + sql[m.start():]


def make_provider(cfg: dict, catalog: SchemaCatalog | None = None, seed: int = 0) -> LlmProvider:
    cfg = dict(cfg or {})
    kind = cfg.pop("kind", "mock")
    if kind == "mock":
        if catalog is None:
            raise ValueError("the mock provider needs a schema catalog")
        faults = {k: tuple(v) for k, v in (cfg.get("faults") or {}).items()}
        return MockProvider(catalog, int(cfg.get("seed", seed)), faults)
    if kind == "live":
        return LiveProvider(cfg["endpoint"], cfg["model"], cfg.get("api_key_env", "OPENAI_API_KEY"),
                            float(cfg.get("timeout", 120)), cfg.get("cache_dir"))
    raise ValueError(f"unknown provider kind {kind!r}")
