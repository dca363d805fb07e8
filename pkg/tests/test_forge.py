import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fixtures
from sqlshaper.catalog import JoinPath, enumerate_join_paths, introspect, summarize_for_prompt
from sqlshaper.forge import (build_prompt, check_and_rewrite, export_templates, generate_templates,
                             load_template_file, probe_executable)
from sqlshaper.model import TemplateSpec
from sqlshaper.oracle import SyntheticOracle
from sqlshaper.providers import MockProvider


def draft(catalog, spec, provider, pick=0):
    paths = enumerate_join_paths(catalog, spec.num_joins)
    path = paths[pick % len(paths)]
    return provider.generate(build_prompt(spec, summarize_for_prompt(catalog, path), path))


def test_prompt_contents(users_db):
    cat = introspect(f"sqlite:///{users_db}")
    spec = TemplateSpec("s1", {"num_joins": 1}, ("use GROUP BY",))
    path = enumerate_join_paths(cat, 1)[0]
    p = build_prompt(spec, summarize_for_prompt(cat, path), path)
    assert "users" in p and "orders" in p
    assert '{"num_joins": 1}' in p and "use GROUP BY" in p
    assert "{p_1}" in p and "exactly one SQL statement" in p
    assert p == build_prompt(spec, summarize_for_prompt(cat, path), path)


def test_prompt_mentions_only_path_tables(imdb):
    path = next(p for p in enumerate_join_paths(imdb, 1) if set(p.tables) == {"cast_info", "title"})
    p = build_prompt(TemplateSpec("s", {"num_joins": 1}), summarize_for_prompt(imdb, path), path)
    words = set(p.replace("(", " ").replace(")", " ").replace(".", " ").replace(",", " ").split())
    others = set(fixtures.IMDB_TABLES) - {"cast_info", "title"}
    assert words & others == set()


def test_valid_template_is_a_fixed_point(lab):
    spec = TemplateSpec("s", {"num_joins": 1, "num_aggregations": 1})
    prov = MockProvider(lab, 0)
    text = draft(lab, spec, prov)
    res = check_and_rewrite(text, spec, lab, SyntheticOracle("identity", catalog=lab), prov, k=5)
    assert res.verified and len(res.trace.steps) == 1 and res.trace.rewrites == 0
    assert res.template.sql_text == text


def test_syntax_error_fixed_on_second_attempt(lab):
    spec = TemplateSpec("s", {"num_joins": 1, "num_aggregations": 1})
    prov = MockProvider(lab, 0, faults={"s": (0, 1)})
    text = draft(lab, spec, prov)
    res = check_and_rewrite(text, spec, lab, SyntheticOracle("identity", catalog=lab), prov, k=5)
    assert len(res.trace.steps) == 2 and res.verified
    assert not res.trace.steps[0].executable and res.trace.steps[1].executable


class Stubborn(MockProvider):
    def fix_semantics(self, template, spec, violations):
        return str(template)


def test_never_fixed_is_unverified(lab):
    spec = TemplateSpec("s", {"num_joins": 1, "num_aggregations": 1})
    prov = Stubborn(lab, 0, faults={"s": (1, 0)})
    text = draft(lab, spec, prov)
    res = check_and_rewrite(text, spec, lab, SyntheticOracle("identity", catalog=lab), prov, k=4)
    assert not res.verified and len(res.trace.steps) == 4
    with pytest.raises(ValueError):
        check_and_rewrite(text, spec, lab, SyntheticOracle("identity"), prov, k=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(1, 5), st.integers(0, 1000))
def test_verified_flag_is_sound(sem, syn, k, seed):
    cat = fixtures.lab_catalog()
    spec = TemplateSpec("s", {"num_joins": 1, "num_aggregations": 2}, ("use two predicates",))
    prov = MockProvider(cat, seed, faults={"s": (sem, syn)})
    oracle = SyntheticOracle("identity", catalog=cat)
    res = check_and_rewrite(draft(cat, spec, prov), spec, cat, oracle, prov, k=k)
    assert len(res.trace.steps) <= k
    if res.verified:
        tpl, errors = probe_executable(res.text, cat, oracle, "x")
        assert tpl is not None and errors == []
        assert prov.validate_semantics(res.text, spec)[0]


def test_generate_templates_empty_and_no_path(lab):
    prov = MockProvider(lab, 0)
    oracle = SyntheticOracle("identity", catalog=lab)
    assert generate_templates([], lab, oracle, prov).templates == []
    two = fixtures.band_catalog()
    res = generate_templates([TemplateSpec("big", {"num_joins": 5})], two, oracle, MockProvider(two))
    assert res.templates == [] and res.failures["big"].startswith("NoPathForJoinCount")


def test_twenty_four_specs_all_verified(lab, tmp_path):
    specs, faults = fixtures.twenty_four_specs()
    prov = MockProvider(lab, 11, faults=faults)
    oracle = SyntheticOracle("identity", catalog=lab)
    res = generate_templates(specs, lab, oracle, prov, k=5, attempts_per_spec=3, seed=11, parallelism=4)
    assert [o.spec.id for o in res.outcomes] == [s.id for s in specs]
    assert len(res.templates) == 24
    series = res.attempt_series()
    for key in ("spec_correct", "syntax_correct"):
        assert all(a <= b for a, b in zip(series[key], series[key][1:]))
    assert prov.total_tokens == sum(c.prompt_tokens + c.completion_tokens for c in prov.calls)
    paths = export_templates(res, tmp_path)
    assert len(paths) == 24
    tpl = load_template_file(paths[0], lab)
    assert tpl.spec_id == "q01" and tpl.sql_text == res.templates[0].sql_text


def test_generation_is_reproducible(lab):
    specs, faults = fixtures.twenty_four_specs()
    oracle = SyntheticOracle("identity", catalog=lab)
    a = generate_templates(specs[:6], lab, oracle, MockProvider(lab, 2, faults), seed=2, parallelism=3)
    b = generate_templates(specs[:6], lab, oracle, MockProvider(lab, 2, faults), seed=2)
    assert [t.sql_text for t in a.templates] == [t.sql_text for t in b.templates]
