"""Citation and reference parsing, including a generated 200-response corpus."""
import random

import pytest

from ragprobe.citations import (
    Reference,
    Statement,
    align_statements_to_refs,
    classify_reference_origin,
    parse_inline_citations,
    parse_label_list,
    parse_llm_alignment,
    parse_reference_section,
    parse_statement_list,
    reinsert_citations,
    response_body,
    split_citations,
)
from ragprobe.corpus import Passage


# -- generated response corpus ------------------------------------------------------

TOPICS = [
    "aspirin reduces platelet aggregation",
    "metformin lowers hepatic glucose output",
    "sepsis requires early antibiotics",
    "chronic anemia alters cardiac output",
    "biopsy confirms the lesion type",
]

NUMBERING = ["{n}. {text}", "[{n}] {text}", "{n}) {text}"]


def generate_response(rng: random.Random) -> dict:
    """One synthetic response with known citations, references, and quirks."""
    n_refs = rng.randint(0, 5)
    ordinals = list(range(1, n_refs + 1))
    if ordinals and rng.random() < 0.3:  # gapped ordinals
        ordinals = sorted(rng.sample(range(1, 10), n_refs))
    sentences = []
    cited = []
    for _ in range(rng.randint(2, 6)):
        topic = rng.choice(TOPICS)
        marks = ""
        if ordinals and rng.random() < 0.7:
            chosen = rng.sample(ordinals, rng.randint(1, min(2, len(ordinals))))
            cited.extend(chosen)
            marks = "".join(f" [{o}]" if rng.random() < 0.5 else f"[{o}]" for o in chosen)
        if rng.random() < 0.3:  # mid-sentence citation
            head, tail = topic.split(" ", 1)
            sentences.append(f"{head}{marks} {tail}.")
        else:
            sentences.append(f"{topic}{marks}.")
    body = " ".join(sentences)
    missing_section = not ordinals or rng.random() < 0.15
    if missing_section:
        text = body
        ordinals = []
    else:
        fmt = rng.choice(NUMBERING)
        header = rng.choice(["### References", "References", "## References:"])
        lines = [fmt.format(n=o, text=f"Author {o}. Title about topic {o}. Journal.") for o in ordinals]
        if lines and rng.random() < 0.3:  # wrapped reference line
            lines[0] += "\n    continued volume and pages."
        text = body + "\n\n" + header + "\n" + "\n".join(lines)
    return {"text": text, "ordinals": ordinals, "missing_section": missing_section}


CORPUS = [generate_response(random.Random(1000 + i)) for i in range(200)]


def test_citation_round_trip_identity_on_200_responses():
    for i, case in enumerate(CORPUS):
        clean, _, spans = split_citations(case["text"])
        assert reinsert_citations(clean, spans) == case["text"], f"response {i}"


def test_reference_parser_recovers_all_wellformed_ordinals():
    for i, case in enumerate(CORPUS):
        refs, info = parse_reference_section(case["text"])
        assert info["missing_section"] == case["missing_section"], f"response {i}"
        assert [r.ref_ordinal for r in refs] == case["ordinals"], f"response {i}"


def test_wrapped_reference_lines_are_merged():
    text = "Body.\n\n### References\n1. Title line\n   wrapped tail.\n2. Second."
    refs, info = parse_reference_section(text)
    assert len(refs) == 2
    assert "wrapped tail" in refs[0].raw_text
    assert not info["missing_section"]


def test_duplicate_and_gap_warnings_are_nonfatal():
    text = "Body.\n\n### References\n1. A.\n1. A again.\n4. D."
    refs, info = parse_reference_section(text)
    assert [r.ref_ordinal for r in refs] == [1, 1, 4]
    assert info["warnings"]


def test_inline_citation_space_absorption():
    clean, ordinals = parse_inline_citations("COX [1]. Also[2][3].")
    assert clean == "COX. Also."
    assert ordinals == [1, 2, 3]


def test_non_numeric_brackets_untouched():
    clean, ordinals = parse_inline_citations("The report [sic] said [12].")
    assert clean == "The report [sic] said."
    assert ordinals == [12]


def test_response_body_strips_reference_section():
    text = "Claim [1].\n\n### References\n1. Ref."
    assert response_body(text) == "Claim [1].\n\n"


def test_align_statements_marker_path():
    text = "A [1]. B [2][9].\n\n### References\n1. One.\n2. Two."
    refs, _ = parse_reference_section(text)
    stmts = [
        Statement(statement_id="s1", owner="model_response", text="A [1]."),
        Statement(statement_id="s2", owner="model_response", text="B [2][9]."),
    ]
    parsed = align_statements_to_refs(text, stmts, refs)
    assert parsed.body_statements[0].citations == [1]
    assert parsed.body_statements[1].citations == [2, 9]
    assert parsed.body_statements[0].text == "A."
    assert parsed.unmatched_citation_ordinals == [9]


# -- origin triage -----------------------------------------------------------------


def passage(pid, title, text=""):
    return Passage(
        passage_id=pid, doc_id=pid, seq=0, text=text or title, source="pubmed",
        metadata={"title": title},
    )


def test_origin_exact_title_match_is_retrieval_based():
    ref = Reference(ref_ordinal=1, raw_text="Aspirin and platelet aggregation. JAMA.")
    out = classify_reference_origin(ref, [passage("p1", "Aspirin and platelet aggregation")])
    assert out.origin == "retrieval_based"
    assert out.matched_passages == ["p1"]


def test_origin_no_overlap_is_self_generated():
    ref = Reference(ref_ordinal=1, raw_text="Quantum chromodynamics lattice simulations")
    out = classify_reference_origin(ref, [passage("p1", "Aspirin platelet study")])
    assert out.origin == "self_generated"
    assert out.matched_passages == []


def test_origin_middling_overlap_stays_unresolved():
    # token jaccard 3/5 = 0.6, and the title is not a substring of the reference
    ref = Reference(ref_ordinal=1, raw_text="alpha beta xray delta echo")
    out = classify_reference_origin(ref, [passage("p1", "alpha beta delta")])
    assert out.origin == "unresolved"


# -- model-output parsers -------------------------------------------------------------


def test_parse_statement_list_handles_curly_quotes():
    raw = 'Sure: [“Fact one.”, "Fact two."]'
    assert parse_statement_list(raw) == ["Fact one.", "Fact two."]


def test_parse_statement_list_malformed_raises():
    with pytest.raises(ValueError):
        parse_statement_list("no list here")


def test_parse_label_list_normalizes_case_and_hyphens():
    raw = '["Must-have", "nice-to-have"]'
    assert parse_label_list(raw, ("must_have", "nice_to_have")) == ["must_have", "nice_to_have"]


def test_parse_label_list_rejects_unknown_label():
    with pytest.raises(ValueError):
        parse_label_list('["maybe"]', ("must_have", "nice_to_have"))


def test_parse_llm_alignment():
    raw = 'Output:\n{"#1": {"statement": "A", "refs": [1, 3]}, "2": {"refs": []}}'
    assert parse_llm_alignment(raw) == {1: [1, 3], 2: []}


def test_parse_llm_alignment_malformed_raises():
    with pytest.raises(ValueError):
        parse_llm_alignment('{"x": {"refs": [1]}}')
