import pytest

from ragprobe.citations import Reference, Statement
from ragprobe.extraction import (
    classify_must_have,
    filter_distinctive,
    llm_align,
    segment_statements,
)
from ragprobe.gateway import ChatGateway, ScriptedTransport


def gateway(responses):
    return ChatGateway(transport=ScriptedTransport(responses))


def test_segment_statements():
    gw = gateway(['["Fact one.", "Fact two."]'])
    stmts = segment_statements(gw, "Fact one. Fact two.", owner="gold_answer", id_prefix="g")
    assert [s.text for s in stmts] == ["Fact one.", "Fact two."]
    assert [s.statement_id for s in stmts] == ["g1", "g2"]
    assert all(s.owner == "gold_answer" for s in stmts)


def test_segment_statements_resamples_malformed_output():
    gw = gateway(["no list at all", '["Just one fact."]'])
    stmts = segment_statements(gw, "text", owner="model_response")
    assert len(stmts) == 1


def test_classify_must_have_sets_necessity():
    stmts = [
        Statement(statement_id="s1", owner="gold_answer", text="A."),
        Statement(statement_id="s2", owner="gold_answer", text="B."),
    ]
    gw = gateway(['["Must-have", "Nice-to-have"]'])
    labels = classify_must_have(gw, "q?", "A. B.", stmts)
    assert labels == ["must_have", "nice_to_have"]
    assert stmts[0].necessity == "must_have"


def test_classify_must_have_resamples_on_length_mismatch():
    stmts = [Statement(statement_id=f"s{i}", owner="gold_answer", text="x") for i in range(3)]
    gw = gateway(['["Must-have"]', '["Must-have", "Must-have", "Nice-to-have"]'])
    labels = classify_must_have(gw, "q?", "a", stmts)
    assert len(labels) == 3


def test_classify_must_have_gives_up_after_max_attempts():
    stmts = [Statement(statement_id="s1", owner="gold_answer", text="x")]
    gw = gateway(['["Must-have", "Must-have"]'] * 3)
    with pytest.raises(ValueError, match="must-have labeling failed"):
        classify_must_have(gw, "q?", "a", stmts)


def test_filter_distinctive_keeps_only_distinctive():
    stmts = [
        Statement(statement_id="s1", owner="model_response", text="The answer is B."),
        Statement(statement_id="s2", owner="model_response", text="The patient is 33."),
    ]
    gw = gateway(["Distinctive", "Non-distinctive"])
    kept = filter_distinctive(gw, "q?", stmts)
    assert [s.statement_id for s in kept] == ["s1"]
    assert stmts[1].distinctive is False


def test_filter_distinctive_rejects_gold_statements():
    with pytest.raises(ValueError):
        filter_distinctive(
            gateway([]), "q?", [Statement(statement_id="g", owner="gold_answer", text="x")]
        )


def test_llm_align_fallback():
    text = "A. B.\n\n### References\n1. One.\n2. Two."
    stmts = [
        Statement(statement_id="s1", owner="model_response", text="A."),
        Statement(statement_id="s2", owner="model_response", text="B."),
    ]
    refs = [Reference(ref_ordinal=1, raw_text="One."), Reference(ref_ordinal=2, raw_text="Two.")]
    gw = gateway(['{"#1": {"statement": "A.", "refs": [1]}, "#2": {"statement": "B.", "refs": [2, 7]}}'])
    parsed = llm_align(gw, text, stmts, refs)
    assert parsed.body_statements[0].citations == [1]
    assert parsed.body_statements[1].citations == [2, 7]
    assert parsed.unmatched_citation_ordinals == [7]
    assert not parsed.missing_section
