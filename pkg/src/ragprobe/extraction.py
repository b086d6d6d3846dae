"""LLM-backed statement operations: segmentation, must-have labeling,
distinctiveness filtering, and the model-driven alignment fallback.

All of these run at temperature 0 and validate structure via the gateway's
resampling loop. Model responses are segmented on citation-stripped text and
markers are re-attached afterwards, so the extractor cannot invent citations.
"""
from __future__ import annotations

import json

from . import citations, prompts
from .citations import ParsedResponse, Reference, Statement
from .gateway import PROFILES, ChatGateway

_DETERMINISTIC = PROFILES["deterministic"]


def segment_statements(gateway: ChatGateway, text: str, owner: str, id_prefix: str = "s") -> list[Statement]:
    """Break a gold answer or model response into atomic statements, in order."""
    if not text:
        raise ValueError("text must be non-empty")
    prompt = prompts.render_prompt("statement_extraction", {"input": text})
    exchange = gateway.complete_validated(prompt, _DETERMINISTIC, "statement_list")
    facts = citations.parse_statement_list(exchange.response_text)
    return [
        Statement(statement_id=f"{id_prefix}{i}", owner=owner, text=fact)
        for i, fact in enumerate(facts, start=1)
    ]


def classify_must_have(
    gateway: ChatGateway, question: str, answer: str, statements: list[Statement]
) -> list[str]:
    """Label each gold statement must_have / nice_to_have, resampling on length mismatch."""
    prompt = prompts.render_prompt(
        "must_have",
        {
            "query": question,
            "answer": answer,
            "statements": json.dumps([s.text for s in statements]),
        },
    )
    last_error = None
    for _ in range(gateway.max_attempts):
        exchange = gateway.complete_validated(prompt, _DETERMINISTIC, "statement_list")
        try:
            labels = citations.parse_label_list(
                exchange.response_text, ("must_have", "nice_to_have")
            )
        except ValueError as exc:
            last_error = exc
            continue
        if len(labels) == len(statements):
            for stmt, label in zip(statements, labels):
                stmt.necessity = label
            return labels
        last_error = ValueError(
            f"expected {len(statements)} labels, got {len(labels)}"
        )
    raise ValueError(f"must-have labeling failed: {last_error}")


def filter_distinctive(
    gateway: ChatGateway, question: str, statements: list[Statement]
) -> list[Statement]:
    """Keep only statements that add reasoning, facts, or a final judgment."""
    kept = []
    for stmt in statements:
        if stmt.owner != "model_response":
            raise ValueError("distinctiveness applies to model_response statements only")
        prompt = prompts.render_prompt(
            "distinctive_filter", {"question": question, "sentence": stmt.text}
        )
        exchange = gateway.complete_validated(prompt, _DETERMINISTIC, "distinctive_token")
        verdict = exchange.response_text.strip().strip('".').lower()
        stmt.distinctive = verdict == "distinctive"
        if stmt.distinctive:
            kept.append(stmt)
    return kept


def llm_align(
    gateway: ChatGateway,
    response_text: str,
    statements: list[Statement],
    references: list[Reference],
) -> ParsedResponse:
    """Alignment fallback for when inline markers did not survive segmentation."""
    prompt = prompts.render_prompt(
        "citation_alignment",
        {
            "model_response": response_text,
            "model_statements": json.dumps([s.text for s in statements]),
            "references": json.dumps([r.raw_text for r in references]),
        },
    )
    exchange = gateway.complete_validated(prompt, _DETERMINISTIC, "valid_alignment_structure")
    alignment = citations.parse_llm_alignment(exchange.response_text)
    known = {r.ref_ordinal for r in references}
    unmatched: set[int] = set()
    for i, stmt in enumerate(statements, start=1):
        ordinals = alignment.get(i, [])
        stmt.citations = sorted(set(ordinals))
        unmatched.update(o for o in ordinals if o not in known)
    _, info = citations.parse_reference_section(response_text)
    return ParsedResponse(
        body_statements=statements,
        references=references,
        unmatched_citation_ordinals=sorted(unmatched),
        missing_section=info["missing_section"],
        warnings=info["warnings"],
    )
