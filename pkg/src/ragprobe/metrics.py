"""Quantitative evaluation: retrieval metrics, selection precision/recall,
factuality and completeness (with evidence-category breakdowns), answer
accuracy support, and filter-classifier quality.

Conventions:
- a passage is relevant to a query when it fully or partially supports at
  least one must-have statement;
- undefined ratios (zero denominators) are reported as value=None with a
  reason, never coerced to 0 or 1;
- statement-level factuality/completeness are macro over queries; selection
  precision/recall and per-bucket breakdowns are micro (pooled counts).
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SUPPORT_LEVELS = ("full", "partial", "none")


class MetricError(Exception):
    pass


@dataclass
class MetricReport:
    name: str
    value: float | None
    n: int
    ci_low: float | None = None
    ci_high: float | None = None
    stratum: dict = field(default_factory=dict)
    undefined_reason: str | None = None

    def __post_init__(self):
        if self.value is not None and self.ci_low is not None and self.ci_high is not None:
            if not (self.ci_low <= self.value <= self.ci_high):
                raise MetricError(
                    f"{self.name}: CI ({self.ci_low}, {self.ci_high}) does not bracket {self.value}"
                )

    def to_record(self) -> dict:
        return {
            "metric": self.name,
            "value": self.value,
            "n": self.n,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "stratum": self.stratum,
            "undefined_reason": self.undefined_reason,
        }


# -- resolved annotation structures ---------------------------------------------


@dataclass
class QueryRelevance:
    """Resolved relevance annotation for one query's ranked retrieval list."""

    query_id: str
    ranked_passages: list[str]  # retrieval order, best first
    must_have_ids: list[str]
    levels: dict[tuple[str, str], str]  # (passage_id, statement_id) -> support level
    query_type: str = ""

    def level(self, passage_id: str, statement_id: str) -> str:
        try:
            return self.levels[(passage_id, statement_id)]
        except KeyError:
            raise MetricError(
                f"query {self.query_id}: missing relevance label for "
                f"passage {passage_id} x statement {statement_id}"
            )

    def passage_relevant(self, passage_id: str) -> bool:
        return any(
            self.level(passage_id, sid) in ("full", "partial") for sid in self.must_have_ids
        )

    def relevant_passages(self, k: int | None = None) -> set[str]:
        ranked = self.ranked_passages if k is None else self.ranked_passages[:k]
        return {pid for pid in ranked if self.passage_relevant(pid)}


@dataclass
class ResponseSelection:
    """One RAG response's references, resolved against the query's retrieval."""

    query_id: str
    model_id: str
    references: list[dict]  # {"ref_ordinal", "origin", "matched_passages": [...]}
    relevance: QueryRelevance


@dataclass
class StatementRecord:
    """One model statement with its factuality verdict and citation resolution."""

    query_id: str
    model_id: str
    statement_id: str
    verdict: bool
    citations: list[int] = field(default_factory=list)
    # ref_ordinal -> {"origin", "matched_passages": [...]}; empty when uncited
    references: dict[int, dict] = field(default_factory=dict)
    relevance: QueryRelevance | None = None


@dataclass
class MustHaveRecord:
    """One (model, must-have statement) completeness judgment with retrieval context."""

    query_id: str
    model_id: str
    statement_id: str
    level: str  # full | partial | none
    supporting_passages: set[str] = field(default_factory=set)  # top-k passages supporting it
    cited_passages: set[str] = field(default_factory=set)  # passages cited by the response


# -- evidence retrieval -----------------------------------------------------------


def passage_relevant(levels: Iterable[str]) -> bool:
    """A passage is relevant when any must-have statement gets full or partial support."""
    levels = list(levels)
    if not levels:
        raise MetricError("no support labels supplied for passage")
    for level in levels:
        if level not in SUPPORT_LEVELS:
            raise MetricError(f"unknown support level {level!r}")
    return any(level in ("full", "partial") for level in levels)


def _check_depth(queries: Sequence[QueryRelevance], k: int) -> None:
    for q in queries:
        if k > len(q.ranked_passages):
            raise MetricError(
                f"k={k} exceeds annotated depth {len(q.ranked_passages)} for query {q.query_id}"
            )


def precision_at_k(queries: Sequence[QueryRelevance], k: int, stratum: dict | None = None) -> MetricReport:
    _check_depth(queries, k)
    per_query = [len(q.relevant_passages(k)) / k for q in queries]
    return MetricReport(
        name=f"precision@{k}",
        value=sum(per_query) / len(per_query),
        n=len(queries),
        stratum=stratum or {},
    )


def miss_at_k(queries: Sequence[QueryRelevance], k: int, stratum: dict | None = None) -> MetricReport:
    _check_depth(queries, k)
    misses = [1.0 if not q.relevant_passages(k) else 0.0 for q in queries]
    return MetricReport(
        name=f"miss@{k}",
        value=sum(misses) / len(misses),
        n=len(queries),
        stratum=stratum or {},
    )


def coverage_at_k(
    queries: Sequence[QueryRelevance], k: int, pooled: bool = True, stratum: dict | None = None
) -> MetricReport:
    """Fraction of must-have statements supported by any top-k passage.

    Pooled over all statements by default; pooled=False macro-averages per query.
    """
    _check_depth(queries, k)
    per_query: list[tuple[int, int]] = []
    for q in queries:
        supported = 0
        for sid in q.must_have_ids:
            if any(
                q.level(pid, sid) in ("full", "partial") for pid in q.ranked_passages[:k]
            ):
                supported += 1
        per_query.append((supported, len(q.must_have_ids)))
    if pooled:
        total = sum(t for _, t in per_query)
        value = sum(s for s, _ in per_query) / total
        n = total
    else:
        fractions = [s / t for s, t in per_query if t]
        value = sum(fractions) / len(fractions)
        n = len(fractions)
    return MetricReport(name=f"coverage@{k}", value=value, n=n, stratum=stratum or {})


# -- evidence selection ------------------------------------------------------------


def selection_metrics(
    responses: Sequence[ResponseSelection],
    k: int | None = None,
    per_reference_recall: bool = False,
) -> tuple[MetricReport, MetricReport]:
    """Micro-averaged selection precision and recall over retrieval-based references.

    precision: relevant cited retrieval-based references / all cited
    retrieval-based references (a reference counts as relevant when any of its
    matched passages is relevant). recall: distinct relevant passages cited /
    distinct relevant passages retrieved; per_reference_recall counts
    references instead of distinct passages.
    """
    cited = 0
    cited_relevant = 0
    recall_num = 0
    recall_den = 0
    for resp in responses:
        rel = resp.relevance
        relevant_retrieved = rel.relevant_passages(k)
        cited_passages: set[str] = set()
        for ref in resp.references:
            if ref.get("origin") != "retrieval_based":
                continue  # self-generated references are excluded from this analysis
            cited += 1
            matched = set(ref.get("matched_passages", []))
            cited_passages |= matched
            if matched & relevant_retrieved:
                cited_relevant += 1
            if per_reference_recall and matched & relevant_retrieved:
                recall_num += 1
        if per_reference_recall:
            recall_den += len(relevant_retrieved)
        else:
            recall_num += len(cited_passages & relevant_retrieved)
            recall_den += len(relevant_retrieved)
    precision = MetricReport(
        name="selection_precision",
        value=cited_relevant / cited if cited else None,
        n=cited,
        undefined_reason=None if cited else "no cited retrieval-based references",
    )
    recall = MetricReport(
        name="selection_recall",
        value=recall_num / recall_den if recall_den else None,
        n=recall_den,
        undefined_reason=None if recall_den else "no relevant passages retrieved",
    )
    return precision, recall


# -- response generation ------------------------------------------------------------


def factuality_scores(records: Sequence[StatementRecord]) -> tuple[MetricReport, MetricReport]:
    """Response-level (all statements true) and statement-level (macro over queries)."""
    if not records:
        raise MetricError("no factuality records supplied")
    by_response: dict[tuple[str, str], list[bool]] = defaultdict(list)
    for rec in records:
        by_response[(rec.query_id, rec.model_id)].append(rec.verdict)
    response_vals = [1.0 if all(vs) else 0.0 for vs in by_response.values()]
    statement_vals = [sum(vs) / len(vs) for vs in by_response.values()]
    n = len(by_response)
    return (
        MetricReport(name="factuality_response", value=sum(response_vals) / n, n=n),
        MetricReport(name="factuality_statement", value=sum(statement_vals) / n, n=n),
    )


# bucket precedence: a statement with any relevant citation is graded on its
# best evidence; the order is explicit and configurable
EVIDENCE_BUCKETS = ("true_positive", "false_positive", "self_generated", "no_reference")


def evidence_bucket(rec: StatementRecord, precedence: Sequence[str] = EVIDENCE_BUCKETS) -> str:
    present: set[str] = set()
    if not rec.citations:
        present.add("no_reference")
    for ordinal in rec.citations:
        ref = rec.references.get(ordinal)
        if ref is None:
            continue
        if ref.get("origin") == "retrieval_based":
            matched = set(ref.get("matched_passages", []))
            if rec.relevance is not None and matched & rec.relevance.relevant_passages():
                present.add("true_positive")
            else:
                present.add("false_positive")
        elif ref.get("origin") == "self_generated":
            present.add("self_generated")
    if not present:
        present.add("no_reference")  # citations resolved to nothing
    for bucket in precedence:
        if bucket in present:
            return bucket
    return "no_reference"


def factuality_by_evidence(
    records: Sequence[StatementRecord], precedence: Sequence[str] = EVIDENCE_BUCKETS
) -> dict[str, MetricReport]:
    """Per-bucket statement-level factuality (micro over statements in the bucket)."""
    buckets: dict[str, list[bool]] = {b: [] for b in precedence}
    for rec in records:
        buckets[evidence_bucket(rec, precedence)].append(rec.verdict)
    reports = {}
    for bucket, verdicts in buckets.items():
        reports[bucket] = MetricReport(
            name=f"factuality_{bucket}",
            value=sum(verdicts) / len(verdicts) if verdicts else None,
            n=len(verdicts),
            stratum={"evidence_category": bucket, "precedence": list(precedence)},
            undefined_reason=None if verdicts else "empty bucket",
        )
    return reports


def completeness_scores(
    records: Sequence[MustHaveRecord], partial_weight: float = 1.0
) -> tuple[MetricReport, MetricReport]:
    """Response-level and statement-level completeness.

    partial_weight=1.0 counts partial support as covered (the default,
    mirroring the merged agreement categories); lower weights score partial
    proportionally at the statement level.
    """
    if not records:
        raise MetricError("no completeness records supplied")
    if not (0.0 <= partial_weight <= 1.0):
        raise MetricError("partial_weight must be in [0, 1]")
    value_of = {"full": 1.0, "partial": partial_weight, "none": 0.0}
    by_response: dict[tuple[str, str], list[float]] = defaultdict(list)
    for rec in records:
        if rec.level not in value_of:
            raise MetricError(f"unknown completeness level {rec.level!r}")
        by_response[(rec.query_id, rec.model_id)].append(value_of[rec.level])
    response_vals = [1.0 if all(v > 0 for v in vs) else 0.0 for vs in by_response.values()]
    statement_vals = [sum(vs) / len(vs) for vs in by_response.values()]
    n = len(by_response)
    return (
        MetricReport(
            name="completeness_response",
            value=sum(response_vals) / n,
            n=n,
            stratum={"partial_weight": partial_weight},
        ),
        MetricReport(
            name="completeness_statement",
            value=sum(statement_vals) / n,
            n=n,
            stratum={"partial_weight": partial_weight},
        ),
    )


SUPPORT_BUCKETS = ("supported_referenced", "supported_missed", "unsupported")


def support_bucket(rec: MustHaveRecord) -> str:
    if not rec.supporting_passages:
        return "unsupported"
    if rec.supporting_passages & rec.cited_passages:
        return "supported_referenced"
    return "supported_missed"


def completeness_by_support(
    records: Sequence[MustHaveRecord], partial_weight: float = 1.0
) -> dict[str, MetricReport]:
    """Per-bucket completeness for must-have statements (micro within bucket)."""
    value_of = {"full": 1.0, "partial": partial_weight, "none": 0.0}
    buckets: dict[str, list[float]] = {b: [] for b in SUPPORT_BUCKETS}
    for rec in records:
        buckets[support_bucket(rec)].append(value_of[rec.level])
    reports = {}
    for bucket, values in buckets.items():
        reports[bucket] = MetricReport(
            name=f"completeness_{bucket}",
            value=sum(values) / len(values) if values else None,
            n=len(values),
            stratum={"support_category": bucket},
            undefined_reason=None if values else "empty bucket",
        )
    return reports


# -- filter classifier ---------------------------------------------------------------


def classifier_prf(
    predictions: Sequence[bool], gold: Sequence[bool]
) -> tuple[MetricReport, MetricReport, MetricReport]:
    """Micro precision/recall/F1 with relevant as the positive class."""
    if len(predictions) != len(gold):
        raise MetricError("predictions and gold must pair one-to-one")
    tp = sum(1 for p, g in zip(predictions, gold) if p and g)
    fp = sum(1 for p, g in zip(predictions, gold) if p and not g)
    fn = sum(1 for p, g in zip(predictions, gold) if not p and g)
    precision = tp / (tp + fp) if (tp + fp) else None
    recall = tp / (tp + fn) if (tp + fn) else None
    f1 = None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    return (
        MetricReport(
            name="filter_precision",
            value=precision,
            n=tp + fp,
            undefined_reason=None if precision is not None else "no positive predictions",
        ),
        MetricReport(
            name="filter_recall",
            value=recall,
            n=tp + fn,
            undefined_reason=None if recall is not None else "no positive gold labels",
        ),
        MetricReport(
            name="filter_f1",
            value=f1,
            n=len(gold),
            undefined_reason=None if f1 is not None else "precision or recall undefined",
        ),
    )


# -- label file loading ----------------------------------------------------------------


def load_jsonl(path: str | Path) -> list[dict]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def load_query_relevance(labels_dir: str | Path) -> list[QueryRelevance]:
    """Build resolved QueryRelevance objects from a label directory.

    Expects queries.jsonl ({"query_id", "ranked_passages", "must_have_ids",
    "query_type"?}) and relevance.jsonl (one record per label). Multiple
    annotators on the same pair are resolved by first-annotator-wins in
    (annotator_id) order; agreement analysis uses the raw pairs instead.
    """
    labels_dir = Path(labels_dir)
    queries = {}
    for rec in load_jsonl(labels_dir / "queries.jsonl"):
        queries[rec["query_id"]] = QueryRelevance(
            query_id=rec["query_id"],
            ranked_passages=list(rec["ranked_passages"]),
            must_have_ids=list(rec["must_have_ids"]),
            levels={},
            query_type=rec.get("query_type", ""),
        )
    per_pair: dict[tuple[str, str, str], list[tuple[str, str]]] = defaultdict(list)
    for rec in load_jsonl(labels_dir / "relevance.jsonl"):
        key = (rec["query_id"], rec["passage_id"], rec["statement_id"])
        per_pair[key].append((rec.get("annotator_id", ""), rec["level"]))
    for (query_id, passage_id, statement_id), entries in per_pair.items():
        entries.sort()
        queries[query_id].levels[(passage_id, statement_id)] = entries[0][1]
    return list(queries.values())
