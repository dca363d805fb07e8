"""Prompt construction, template drafting and the check-and-rewrite loop."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import (NoPathForJoinCount, JoinPath, SchemaCatalog, enumerate_join_paths,
                      sample_join_path, summarize_for_prompt)
from .model import SqlTemplate, TemplateSpec, instantiate
from .providers import ProviderFailure
from .sqltext import TemplateParseError, numeric_violations, parse_template

log = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_ATTEMPTS = 3


def build_prompt(spec: TemplateSpec, summary: str, path: JoinPath) -> str:
    nums = json.dumps(dict(sorted(spec.numeric_constraints.items())))
    spec_lines = [f"Specification id: {spec.id}", f"Numeric constraints (JSON): {nums}"]
    if spec.nl_instructions:
        spec_lines.append("Instructions:")
        spec_lines.extend(f"- {s}" for s in spec.nl_instructions)
    path_lines = [f"Path table: {t}" for t in path.tables]
    path_lines += [f"Path edge: {e}" for e in path.edges]
    sections = [
        "Write one SQL query template for a PostgreSQL database benchmark.",
        "### Database schema\n" + summary.rstrip(),
        "### Join path\nJoin the tables along this path, using the listed key columns.\n"
        + "\n".join(path_lines),
        "### Specification\n" + "\n".join(spec_lines),
        "### Placeholders\nWrite every predicate value as a placeholder marker {p_1}, {p_2}, ... "
        "compared directly with a column, for example t1.col <= {p_1}. Do not quote markers "
        "and do not write other literal predicate values.",
        "### Output format\nReturn exactly one SQL statement, with no explanation, comments "
        "or markdown.",
    ]
    return "\n\n".join(sections) + "\n"


@dataclass
class RewriteStep:
    """One loop iteration: flags of the text checked, and what was wrong with it."""

    satisfied: bool
    executable: bool
    violations: list[str]
    errors: list[str]
    text: str

    def to_dict(self) -> dict:
        return {"satisfied": self.satisfied, "executable": self.executable,
                "violations": self.violations, "errors": self.errors, "text": self.text}


@dataclass
class RewriteTrace:
    steps: list[RewriteStep] = field(default_factory=list)
    verified: bool = False

    @property
    def rewrites(self) -> int:
        return sum((not s.satisfied) + (not s.executable) for s in self.steps)


@dataclass
class CheckResult:
    template: SqlTemplate | None
    text: str
    trace: RewriteTrace

    @property
    def verified(self) -> bool:
        return self.trace.verified


def probe_executable(text: str, catalog: SchemaCatalog, oracle, template_id: str,
                     spec_id=None, lineage=None):
    """Parse ``text``, instantiate it at domain midpoints and ask the oracle to validate it.

    Returns ``(template or None, errors)``.
    """
    try:
        tpl = parse_template(text, catalog, template_id, spec_id, lineage)
    except TemplateParseError as e:
        return None, list(e.errors)
    except ValueError as e:
        return None, [str(e)]
    try:
        q = instantiate(tpl, {p.name: p.domain.midpoint() for p in tpl.placeholders})
    except ValueError as e:
        return None, [str(e)]
    ok, errors = oracle.validate(q.sql_text)
    return (tpl, []) if ok else (None, list(errors) or ["statement rejected"])


def check_semantics(text: str, spec: TemplateSpec, provider) -> tuple[bool, list[str]]:
    """Local count check first; the provider judges only texts that pass it."""
    local = numeric_violations(text, spec)
    if local:
        return False, local
    return provider.validate_semantics(text, spec)


def check_and_rewrite(text: str, spec: TemplateSpec, catalog: SchemaCatalog, oracle, provider,
                      k: int = DEFAULT_K, template_id: str | None = None,
                      lineage=None) -> CheckResult:
    """Validate and repair a drafted template for at most ``k`` iterations.

    Each iteration checks specification compliance (repairing if needed), then
    executability of the current text (repairing if needed). The template is
    verified only when an iteration finds both properties without a repair.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    template_id = template_id or f"tpl_{spec.id}"
    trace = RewriteTrace()
    for _ in range(k):
        satisfied, violations = check_semantics(text, spec, provider)
        if not satisfied:
            fixed = provider.fix_semantics(text, spec, violations)
        else:
            fixed = text
        tpl, errors = probe_executable(fixed, catalog, oracle, template_id, spec.id, lineage)
        executable = tpl is not None
        trace.steps.append(RewriteStep(satisfied, executable, violations, errors, text))
        if satisfied and executable:
            trace.verified = True
            return CheckResult(tpl, fixed, trace)
        text = fixed if executable else provider.fix_execution(_Text(fixed, spec.id), errors)
    tpl, _ = probe_executable(text, catalog, oracle, template_id, spec.id, lineage)
    return CheckResult(tpl, text, trace)


class _Text(str):
    """Template text that remembers which specification it was drafted for."""

    def __new__(cls, text, spec_id):
        obj = super().__new__(cls, text)
        obj.spec_id = spec_id
        obj.sql_text = str(text)
        return obj


@dataclass
class SpecOutcome:
    spec: TemplateSpec
    template: SqlTemplate | None = None
    status: str = "failed"  # verified | unverified | failed
    error: str | None = None
    traces: list[RewriteTrace] = field(default_factory=list)
    paths: list[JoinPath] = field(default_factory=list)
    text: str = ""

    def series(self) -> tuple[list[bool], list[bool]]:
        """Per-attempt spec and syntax flags over all iterations of all retries."""
        steps = [s for t in self.traces for s in t.steps]
        return [s.satisfied for s in steps], [s.executable for s in steps]


@dataclass
class GenerationResult:
    outcomes: list[SpecOutcome]

    @property
    def templates(self) -> list[SqlTemplate]:
        return [o.template for o in self.outcomes if o.status == "verified"]

    @property
    def failures(self) -> dict[str, str]:
        return {o.spec.id: o.error or o.status for o in self.outcomes if o.status != "verified"}

    def attempt_series(self, attempts: int | None = None) -> dict[str, list[int]]:
        """Cumulative counts of templates that have been spec-correct / executable by attempt ``a``.

        Attempt 0 is the first draft; attempt ``a`` is the text after ``a`` rewrites.
        """
        per = [o.series() for o in self.outcomes]
        n = max((len(s) for s, _ in per), default=0)
        if attempts is not None:
            n = attempts + 1
        spec_counts, syn_counts = [], []
        for a in range(n):
            spec_counts.append(sum(any(s[: a + 1]) for s, _ in per))
            syn_counts.append(sum(any(x[: a + 1]) for _, x in per))
        return {"spec_correct": spec_counts, "syntax_correct": syn_counts}


def _join_count(spec: TemplateSpec) -> int:
    if spec.num_joins is not None:
        return spec.num_joins
    return max(0, spec.numeric_constraints.get("num_tables_accessed", 1) - 1)


def generate_one(spec: TemplateSpec, catalog: SchemaCatalog, oracle, provider, k: int,
                 attempts: int, rng, paths_cache=None) -> SpecOutcome:
    out = SpecOutcome(spec)
    joins = _join_count(spec)
    paths = (paths_cache or {}).get(joins)
    if paths is None:
        paths = enumerate_join_paths(catalog, joins, seed=int(rng.integers(2**31)))
    if not paths:
        out.error = f"NoPathForJoinCount: {NoPathForJoinCount(joins)}"
        return out
    for _ in range(max(1, attempts)):
        path = sample_join_path(paths, rng)
        out.paths.append(path)
        try:
            draft = provider.generate(build_prompt(spec, summarize_for_prompt(catalog, path), path))
            res = check_and_rewrite(draft, spec, catalog, oracle, provider, k)
        except ProviderFailure as e:
            out.error = f"provider failure: {e}"
            log.warning("spec %s: %s", spec.id, e)
            continue
        out.traces.append(res.trace)
        out.text = res.text
        if res.verified:
            out.template, out.status, out.error = res.template, "verified", None
            return out
        out.status = "unverified"
    return out


def generate_templates(specs, catalog: SchemaCatalog, oracle, provider, k: int = DEFAULT_K,
                       attempts_per_spec: int = DEFAULT_ATTEMPTS, seed: int = 0,
                       parallelism: int = 1) -> GenerationResult:
    """Draft and verify one template per specification; output order follows ``specs``."""
    specs = list(specs)
    if not specs:
        return GenerationResult([])
    children = np.random.SeedSequence(seed).spawn(len(specs))
    cache = {}
    for j in sorted({_join_count(s) for s in specs}):
        cache[j] = enumerate_join_paths(catalog, j, seed=seed)

    def run(i):
        return generate_one(specs[i], catalog, oracle, provider, k, attempts_per_spec,
                            np.random.default_rng(children[i]), cache)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, range(len(specs))))
    else:
        outcomes = [run(i) for i in range(len(specs))]
    return GenerationResult(outcomes)


def template_file_text(outcome: SpecOutcome) -> str:
    tpl = outcome.template
    text = tpl.sql_text if tpl is not None else outcome.text
    return f"-- spec: {outcome.spec.id}\n-- status: {outcome.status}\n{text};\n"


def export_templates(result: GenerationResult, directory: str | Path) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for o in result.outcomes:
        if o.status != "verified":
            continue
        p = d / f"{o.template.id}.sql"
        p.write_text(template_file_text(o))
        written.append(p)
    return written


def load_template_file(path: str | Path, catalog: SchemaCatalog, template_id: str | None = None) -> SqlTemplate:
    text = Path(path).read_text()
    spec_id = None
    for line in text.splitlines():
        if line.startswith("-- spec:"):
            spec_id = line.split(":", 1)[1].strip()
    body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("--"))
    return parse_template(body, catalog, template_id or Path(path).stem, spec_id)
