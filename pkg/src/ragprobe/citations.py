"""Statement and citation parsing for gold answers and model responses.

Covers: deterministic parsing of "### References" sections and inline
[n] markers, LLM-backed statement segmentation / must-have labeling /
distinctiveness filtering, statement-to-reference alignment, and
classifying where each reference came from (retrieved vs self-generated).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .corpus import Passage
from .retriever import tokenize

# normalized-title Jaccard thresholds for assisted origin matching;
# human labels always win when present
MATCH_FLOOR = 0.8
REJECT_CEILING = 0.4


@dataclass
class Statement:
    statement_id: str
    owner: str  # "gold_answer" | "model_response"
    text: str
    citations: list[int] = field(default_factory=list)
    necessity: str | None = None  # gold only: "must_have" | "nice_to_have"
    distinctive: bool | None = None  # model only
    citation_spans: list[tuple[int, str]] = field(default_factory=list)  # (offset, raw marker)

    def to_record(self) -> dict:
        return {
            "statement_id": self.statement_id,
            "owner": self.owner,
            "text": self.text,
            "citations": self.citations,
            "necessity": self.necessity,
            "distinctive": self.distinctive,
        }


@dataclass
class Reference:
    ref_ordinal: int
    raw_text: str
    matched_passages: list[str] = field(default_factory=list)
    origin: str = "unresolved"  # "retrieval_based" | "self_generated" | "unresolved"
    verifiability: str | None = None  # annotator-entered

    def to_record(self) -> dict:
        return {
            "ref_ordinal": self.ref_ordinal,
            "raw_text": self.raw_text,
            "matched_passages": self.matched_passages,
            "origin": self.origin,
            "verifiability": self.verifiability,
        }


@dataclass
class ParsedResponse:
    body_statements: list[Statement]
    references: list[Reference]
    unmatched_citation_ordinals: list[int] = field(default_factory=list)
    missing_section: bool = False
    warnings: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "body_statements": [s.to_record() for s in self.body_statements],
            "references": [r.to_record() for r in self.references],
            "unmatched_citation_ordinals": self.unmatched_citation_ordinals,
            "missing_section": self.missing_section,
            "warnings": self.warnings,
        }


_CITATION = re.compile(r" ?\[(\d+)\]")
_SECTION_HEADER = re.compile(r"^#{0,4}\s*References\s*:?\s*$", re.IGNORECASE | re.MULTILINE)
_REF_LINE = re.compile(r"^\s*(?:\[(\d+)\]|(\d+)[.)])\s*(.*\S)\s*$")


def parse_inline_citations(statement_text: str) -> tuple[str, list[int]]:
    """Strip [n] markers from a statement, returning clean text and the ordinals.

    Non-numeric brackets (e.g. [sic]) are left alone. A single space directly
    before a marker is absorbed so "COX [1]." becomes "COX.".
    """
    clean, ordinals, _ = split_citations(statement_text)
    return clean, ordinals


def split_citations(statement_text: str) -> tuple[str, list[int], list[tuple[int, str]]]:
    """Like parse_inline_citations but also returns (clean offset, raw marker) spans
    so the original text can be reconstructed exactly."""
    out = []
    ordinals: list[int] = []
    spans: list[tuple[int, str]] = []
    prev = 0
    clean_len = 0
    for m in _CITATION.finditer(statement_text):
        chunk = statement_text[prev : m.start()]
        out.append(chunk)
        clean_len += len(chunk)
        ordinals.append(int(m.group(1)))
        spans.append((clean_len, m.group(0)))
        prev = m.end()
    out.append(statement_text[prev:])
    return "".join(out), ordinals, spans


def reinsert_citations(clean_text: str, spans: list[tuple[int, str]]) -> str:
    """Inverse of split_citations: re-insert raw markers at their recorded offsets."""
    parts = []
    prev = 0
    for offset, raw in spans:
        parts.append(clean_text[prev:offset])
        parts.append(raw)
        prev = offset
    parts.append(clean_text[prev:])
    return "".join(parts)


def parse_reference_section(response_text: str) -> tuple[list[Reference], dict]:
    """Deterministically parse the trailing references section.

    Accepts `1.`, `[1]`, and `1)` numbering. Returns (references, info) where
    info carries missing_section / duplicate / gap diagnostics; parsing never
    aborts on those.
    """
    info: dict = {"missing_section": False, "warnings": []}
    m = _SECTION_HEADER.search(response_text)
    if m is None:
        info["missing_section"] = True
        return [], info
    section = response_text[m.end() :]
    references: list[Reference] = []
    seen: dict[int, int] = {}
    current: Reference | None = None
    for line in section.splitlines():
        lm = _REF_LINE.match(line)
        if lm:
            ordinal = int(lm.group(1) or lm.group(2))
            current = Reference(ref_ordinal=ordinal, raw_text=lm.group(3))
            if ordinal in seen:
                info["warnings"].append(f"duplicate reference ordinal {ordinal}")
            seen[ordinal] = seen.get(ordinal, 0) + 1
            references.append(current)
        elif line.strip() and current is not None:
            current.raw_text += " " + line.strip()  # wrapped reference line
    ordinals = [r.ref_ordinal for r in references]
    if ordinals and ordinals != list(range(1, len(ordinals) + 1)):
        info["warnings"].append(f"non-consecutive reference ordinals: {ordinals}")
    return references, info


def response_body(response_text: str) -> str:
    """The response with its references section removed."""
    m = _SECTION_HEADER.search(response_text)
    return response_text if m is None else response_text[: m.start()]


def align_statements_to_refs(
    response_text: str,
    statements: list[Statement],
    references: list[Reference],
) -> ParsedResponse:
    """Fill each statement's citation list from its surviving inline markers.

    Ordinals without a parsed reference go to unmatched_citation_ordinals.
    (When markers do not survive segmentation, use llm_align instead.)
    """
    known = {r.ref_ordinal for r in references}
    unmatched: set[int] = set()
    for stmt in statements:
        clean, ordinals, spans = split_citations(stmt.text)
        stmt.text = clean
        stmt.citations = sorted(set(ordinals))
        stmt.citation_spans = spans
        unmatched.update(o for o in ordinals if o not in known)
    _, info = parse_reference_section(response_text)
    return ParsedResponse(
        body_statements=statements,
        references=references,
        unmatched_citation_ordinals=sorted(unmatched),
        missing_section=info["missing_section"],
        warnings=info["warnings"],
    )


def parse_llm_alignment(raw: str) -> dict[int, list[int]]:
    """Parse the alignment model's JSON output ({"#1": {"refs": [...]}, ...})."""
    data = json.loads(_extract_json(raw))
    result: dict[int, list[int]] = {}
    for key, value in data.items():
        m = re.fullmatch(r"#?(\d+)", str(key).strip())
        if not m or not isinstance(value, dict) or "refs" not in value:
            raise ValueError(f"malformed alignment entry: {key!r}")
        result[int(m.group(1))] = [int(r) for r in value["refs"]]
    return result


def _extract_json(raw: str) -> str:
    start = raw.find("{")
    end = raw.rfind("}")
    if start == -1 or end == -1:
        raise ValueError("no JSON object in model output")
    return raw[start : end + 1]


def _title_tokens(text: str) -> set[str]:
    return set(tokenize(text))


def classify_reference_origin(reference: Reference, retrieved: list[Passage]) -> Reference:
    """Assisted origin triage against the response's retrieved set.

    Exact normalized-title match or token-set Jaccard >= 0.8 labels the
    reference retrieval_based; Jaccard < 0.4 against every candidate labels it
    self_generated; anything between stays unresolved for a human annotator.
    """
    ref_tokens = _title_tokens(reference.raw_text)
    ref_norm = " ".join(tokenize(reference.raw_text))
    matched: list[str] = []
    best = 0.0
    for passage in retrieved:
        title = passage.metadata.get("title", "")
        title_norm = " ".join(tokenize(title))
        candidates = [_title_tokens(title), _title_tokens(passage.text)]
        score = 0.0
        for cand in candidates:
            if not cand or not ref_tokens:
                continue
            inter = len(ref_tokens & cand)
            union = len(ref_tokens | cand)
            score = max(score, inter / union)
        if title_norm and (title_norm == ref_norm or title_norm in ref_norm):
            score = 1.0
        best = max(best, score)
        if score >= MATCH_FLOOR:
            matched.append(passage.passage_id)
    if matched:
        reference.matched_passages = matched
        reference.origin = "retrieval_based"
    elif best < REJECT_CEILING:
        reference.origin = "self_generated"
    else:
        reference.origin = "unresolved"
    return reference


def parse_statement_list(raw: str) -> list[str]:
    """Parse a model's JSON-style list of statement strings; raises on malformed output."""
    start = raw.find("[")
    end = raw.rfind("]")
    if start == -1 or end == -1:
        raise ValueError("no list in model output")
    data = json.loads(raw[start : end + 1].replace("“", '"').replace("”", '"'))
    if not isinstance(data, list) or not data or not all(isinstance(s, str) for s in data):
        raise ValueError("expected a non-empty list of strings")
    return data


def parse_label_list(raw: str, allowed: tuple[str, ...]) -> list[str]:
    """Parse a list of categorical labels, normalized to snake_case tokens."""
    values = parse_statement_list(raw)
    normalized = []
    mapping = {a.lower().replace("-", "_").replace(" ", "_"): a for a in allowed}
    for value in values:
        key = value.strip().lower().replace("-", "_").replace(" ", "_")
        if key not in mapping:
            raise ValueError(f"label {value!r} not in {allowed}")
        normalized.append(mapping[key])
    return normalized
