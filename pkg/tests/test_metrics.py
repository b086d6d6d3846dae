import pytest

from ragprobe.metrics import (
    MetricError,
    MetricReport,
    MustHaveRecord,
    QueryRelevance,
    StatementRecord,
    classifier_prf,
    completeness_by_support,
    completeness_scores,
    coverage_at_k,
    evidence_bucket,
    factuality_by_evidence,
    factuality_scores,
    load_query_relevance,
    miss_at_k,
    precision_at_k,
    selection_metrics,
    support_bucket,
)

from metric_fixture import (
    build_must_have_records,
    build_relevance,
    build_selection,
    build_statements,
    oracle_completeness,
    oracle_coverage,
    oracle_factuality,
    oracle_miss,
    oracle_precision,
    oracle_selection,
)


@pytest.fixture(scope="module")
def queries():
    return build_relevance(seed=0)


def test_precision_miss_coverage_match_bruteforce(queries):
    for k in (1, 2, 4, 8):
        assert precision_at_k(queries, k).value == pytest.approx(
            oracle_precision(queries, k), abs=1e-9
        )
        assert miss_at_k(queries, k).value == pytest.approx(oracle_miss(queries, k), abs=1e-9)
        assert coverage_at_k(queries, k).value == pytest.approx(
            oracle_coverage(queries, k, pooled=True), abs=1e-9
        )
        assert coverage_at_k(queries, k, pooled=False).value == pytest.approx(
            oracle_coverage(queries, k, pooled=False), abs=1e-9
        )


def test_selection_matches_bruteforce(queries):
    responses = build_selection(queries)
    precision, recall = selection_metrics(responses)
    want_p, want_r = oracle_selection(responses)
    assert precision.value == pytest.approx(want_p, abs=1e-9)
    assert recall.value == pytest.approx(want_r, abs=1e-9)


def test_factuality_matches_bruteforce(queries):
    records = build_statements(queries)
    resp, stmt = factuality_scores(records)
    want_resp, want_stmt = oracle_factuality(records)
    assert resp.value == pytest.approx(want_resp, abs=1e-9)
    assert stmt.value == pytest.approx(want_stmt, abs=1e-9)


def test_completeness_matches_bruteforce(queries):
    records = build_must_have_records(queries)
    for w in (1.0, 0.5):
        resp, stmt = completeness_scores(records, partial_weight=w)
        want_resp, want_stmt = oracle_completeness(records, partial_weight=w)
        assert resp.value == pytest.approx(want_resp, abs=1e-9)
        assert stmt.value == pytest.approx(want_stmt, abs=1e-9)


def test_depth_check_rejects_deep_k(queries):
    with pytest.raises(MetricError, match="exceeds annotated depth"):
        precision_at_k(queries, 9)


def test_missing_label_is_an_error():
    q = QueryRelevance(
        query_id="q", ranked_passages=["p1"], must_have_ids=["s1"], levels={}
    )
    with pytest.raises(MetricError, match="missing relevance label"):
        precision_at_k([q], 1)


# -- hand-count cases -----------------------------------------------------------------


def tiny_query():
    return QueryRelevance(
        query_id="q",
        ranked_passages=["p1", "p2", "p3", "p4"],
        must_have_ids=["s1", "s2"],
        levels={
            ("p1", "s1"): "full", ("p1", "s2"): "none",
            ("p2", "s1"): "none", ("p2", "s2"): "none",
            ("p3", "s1"): "partial", ("p3", "s2"): "partial",
            ("p4", "s1"): "none", ("p4", "s2"): "none",
        },
    )


def test_hand_counted_precision_and_coverage():
    q = tiny_query()
    assert precision_at_k([q], 2).value == 0.5  # only p1 relevant in top 2
    assert precision_at_k([q], 4).value == 0.5  # p1 and p3 of 4
    assert miss_at_k([q], 2).value == 0.0
    assert coverage_at_k([q], 2).value == 0.5  # s1 via p1; s2 unsupported
    assert coverage_at_k([q], 4).value == 1.0


def test_selection_hand_counts():
    q = tiny_query()
    from ragprobe.metrics import ResponseSelection

    refs = [
        {"ref_ordinal": 1, "origin": "retrieval_based", "matched_passages": ["p1"]},
        {"ref_ordinal": 2, "origin": "retrieval_based", "matched_passages": ["p2"]},
        {"ref_ordinal": 3, "origin": "self_generated", "matched_passages": []},
    ]
    resp = ResponseSelection(query_id="q", model_id="m", references=refs, relevance=q)
    precision, recall = selection_metrics([resp])
    assert precision.value == 0.5  # ref1 relevant, ref2 not; self-generated excluded
    assert recall.value == 0.5  # cited relevant {p1} of relevant retrieved {p1, p3}
    _, per_ref = selection_metrics([resp], per_reference_recall=True)
    assert per_ref.value == 0.5


def test_selection_undefined_cases():
    q = tiny_query()
    from ragprobe.metrics import ResponseSelection

    resp = ResponseSelection(
        query_id="q",
        model_id="m",
        references=[{"ref_ordinal": 1, "origin": "self_generated", "matched_passages": []}],
        relevance=q,
    )
    precision, _ = selection_metrics([resp])
    assert precision.value is None
    assert precision.undefined_reason


def test_evidence_bucket_precedence():
    q = tiny_query()
    rec = StatementRecord(
        query_id="q", model_id="m", statement_id="x", verdict=True,
        citations=[1, 2],
        references={
            1: {"origin": "retrieval_based", "matched_passages": ["p1"]},  # relevant -> TP
            2: {"origin": "self_generated", "matched_passages": []},
        },
        relevance=q,
    )
    assert evidence_bucket(rec) == "true_positive"
    rec.references[1]["matched_passages"] = ["p2"]  # irrelevant -> FP beats self_generated
    assert evidence_bucket(rec) == "false_positive"
    rec.citations = []
    assert evidence_bucket(rec) == "no_reference"


def test_factuality_by_evidence_buckets(queries):
    records = build_statements(queries)
    reports = factuality_by_evidence(records)
    assert set(reports) == {"true_positive", "false_positive", "self_generated", "no_reference"}
    total = sum(r.n for r in reports.values())
    assert total == len(records)


def test_support_buckets():
    rec = MustHaveRecord(
        query_id="q", model_id="m", statement_id="s", level="full",
        supporting_passages={"p1"}, cited_passages={"p1"},
    )
    assert support_bucket(rec) == "supported_referenced"
    rec.cited_passages = {"p9"}
    assert support_bucket(rec) == "supported_missed"
    rec.supporting_passages = set()
    assert support_bucket(rec) == "unsupported"


def test_completeness_by_support_covers_all_records(queries):
    records = build_must_have_records(queries)
    reports = completeness_by_support(records)
    assert sum(r.n for r in reports.values()) == len(records)


def test_classifier_prf_hand_counts():
    preds = [True, True, False, False, True]
    gold = [True, False, True, False, True]
    precision, recall, f1 = classifier_prf(preds, gold)
    assert precision.value == pytest.approx(2 / 3)
    assert recall.value == pytest.approx(2 / 3)
    assert f1.value == pytest.approx(2 / 3)


def test_classifier_prf_undefined():
    precision, recall, f1 = classifier_prf([False, False], [False, False])
    assert precision.value is None and recall.value is None and f1.value is None
    with pytest.raises(MetricError):
        classifier_prf([True], [True, False])


def test_metric_report_ci_must_bracket_value():
    with pytest.raises(MetricError):
        MetricReport(name="x", value=0.5, n=1, ci_low=0.6, ci_high=0.9)


def test_load_query_relevance_first_annotator_wins(tmp_path):
    (tmp_path / "queries.jsonl").write_text(
        '{"query_id": "q", "ranked_passages": ["p1"], "must_have_ids": ["s1"]}\n'
    )
    (tmp_path / "relevance.jsonl").write_text(
        '{"query_id": "q", "passage_id": "p1", "statement_id": "s1", "level": "none", "annotator_id": "b"}\n'
        '{"query_id": "q", "passage_id": "p1", "statement_id": "s1", "level": "full", "annotator_id": "a"}\n'
    )
    queries = load_query_relevance(tmp_path)
    assert queries[0].level("p1", "s1") == "full"
