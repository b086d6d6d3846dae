"""Command-line entry point.

One run directory per experiment: the config snapshot is written before any
other output, transcripts live next to the RunRecords, and every command is
idempotent over an unchanged directory (replays recorded exchanges instead
of recomputing network calls). Exit codes: 0 success, 1 domain error,
2 usage error.
"""
from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click

from .agreement import mcnemar_exact
import re

from .citations import (
    Statement,
    align_statements_to_refs,
    parse_reference_section,
    response_body,
)

_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")


def _sentences(body: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_BREAK.split(body) if s.strip()]
from .corpus import CorpusError, PassageStore
from .gateway import (
    ChatGateway,
    GatewayError,
    HttpTransport,
    TranscriptStore,
)
from .metrics import (
    MetricError,
    classifier_prf,
    coverage_at_k,
    load_jsonl,
    load_query_relevance,
    miss_at_k,
    precision_at_k,
)
from .pipeline import (
    BenchmarkItem,
    ConfigError,
    Pipeline,
    PipelineConfig,
    RunWriter,
    grid_configs,
)
from .retriever import (
    Bm25Index,
    DenseIndex,
    EmbeddingClient,
    build_bm25_index,
    build_dense_index,
    search_bm25,
)
from .service import AnnotationStore, ServiceError, create_app

CONFIG_VERSION = 1

# published zero-shot / fine-tuned filter F1 baselines, shown as reference
# lines in reports (not reproduced here)
FILTER_F1_REFERENCE = {"zero_shot": 0.521, "fine_tuned": 0.623}

_DOMAIN_ERRORS = (
    CorpusError,
    GatewayError,
    ConfigError,
    MetricError,
    ServiceError,
    FileNotFoundError,
    KeyError,
    ValueError,
)


def domain_errors(fn):
    """Map domain exceptions to exit status 1 with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _DOMAIN_ERRORS as exc:
            raise click.ClickException(str(exc) or exc.__class__.__name__)

    return wrapper


@click.group()
@click.version_option(package_name="ragprobe")
def main():
    """Stage-decomposed retrieval-augmented generation toolkit."""


# -- corpus -----------------------------------------------------------------------


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, help="Corpus name for the output files.")
@click.option("--source", required=True, help="Source tag recorded on every document.")
@click.option("--out", "out_dir", default=".", type=click.Path(), help="Output directory.")
@click.option("--max-chunk-chars", default=1500, show_default=True)
@domain_errors
def ingest(paths, corpus, source, out_dir, max_chunk_chars):
    """Chunk document files (JSONL) into a passage store directory with a manifest."""
    store = PassageStore(corpus_name=corpus, max_chunk_chars=max_chunk_chars)
    malformed = []
    for path in paths:
        malformed.extend(store.ingest_documents(path, source).malformed)
    corpus_dir = Path(out_dir) / corpus
    store.save(corpus_dir)
    manifest = store.manifest(malformed=malformed)
    click.echo(
        f"ingested {manifest.document_count} documents / {manifest.passage_count} passages "
        f"into {corpus_dir} ({len(malformed)} malformed lines skipped)"
    )


@main.command()
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--retriever", type=click.Choice(["bm25", "dense"]), default="bm25", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--embedding-url", default=None, help="Embedding endpoint (dense only).")
@domain_errors
def index(corpus_dir, retriever, out_path, embedding_url):
    """Build and persist a retrieval index over an ingested corpus directory."""
    store = PassageStore.load(corpus_dir)
    checksum = store.manifest().checksum
    if retriever == "bm25":
        idx = build_bm25_index(store.iter_passages(), checksum=checksum)
    else:
        if not embedding_url:
            raise click.UsageError("--embedding-url is required for dense indexes")
        client = EmbeddingClient(embedding_url)
        idx = build_dense_index(store.iter_passages(), client, checksum=checksum)
    idx.save(out_path)
    click.echo(f"{retriever} index over {len(store)} passages written to {out_path}")


@main.command()
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("--k", default=10, show_default=True)
@domain_errors
def search(index_path, query, k):
    """Query a persisted BM25 index."""
    idx = Bm25Index.load(index_path)
    for hit in search_bm25(idx, query, k):
        click.echo(f"{hit.score:10.4f}  {hit.passage_id}")


# -- pipeline ----------------------------------------------------------------------


def _load_config(path: str) -> dict:
    config = json.loads(Path(path).read_text(encoding="utf-8"))
    version = config.get("config_version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version!r} (expected {CONFIG_VERSION})")
    for key in ("corpora", "pipeline"):
        if key not in config:
            raise ConfigError(f"config missing required key {key!r}")
    return config


def _load_items(path: str) -> list[BenchmarkItem]:
    items = []
    for rec in load_jsonl(path):
        items.append(
            BenchmarkItem(
                item_id=rec["item_id"],
                question=rec["question"],
                options=rec.get("options", {}),
                gold=rec.get("gold", ""),
                dataset=rec.get("dataset", "custom"),
            )
        )
    return items


def _build_gateway(config: dict, role: str, store: TranscriptStore, replay: bool) -> ChatGateway:
    endpoints = config.get("endpoints", {})
    spec = endpoints.get(role) or endpoints.get("chat")
    if spec is None and not replay:
        raise ConfigError(f"config has no endpoint for {role!r} and replay is off")
    transport = None
    if spec is not None:
        transport = HttpTransport(
            url=spec["url"],
            model=spec.get("model", ""),
            api_key=os.environ.get(spec.get("api_key_env", ""), ""),
        )
    return ChatGateway(transport=transport, store=store, replay=replay)


def _build_pipeline(config: dict, run_dir: Path, replay: bool) -> Pipeline:
    transcripts = TranscriptStore(run_dir / "transcripts.jsonl")
    pipeline_cfg = config["pipeline"]
    bm25_indexes = {}
    dense_indexes = {}
    encoder = None
    store = PassageStore()
    for name, corpus_dir in config["corpora"].items():
        corpus_store = PassageStore.load(corpus_dir, corpus_name=name)
        store.merge(corpus_store)
        checksum = corpus_store.manifest().checksum
        if pipeline_cfg.get("retriever", "bm25") == "bm25":
            bm25_indexes[name] = build_bm25_index(
                corpus_store.iter_passages(), checksum=checksum
            )
        else:
            embed = config.get("endpoints", {}).get("embedding")
            if embed is None:
                raise ConfigError("dense retriever configured without an embedding endpoint")
            encoder = EmbeddingClient(embed["url"])
            dense_indexes[name] = build_dense_index(
                corpus_store.iter_passages(), encoder, checksum=checksum
            )
    return Pipeline(
        store=store,
        bm25_indexes=bm25_indexes,
        dense_indexes=dense_indexes,
        query_encoder=encoder,
        response_gateway=_build_gateway(config, "chat", transcripts, replay),
        filter_gateway=_build_gateway(config, "filter", transcripts, replay),
    )


def _snapshot_config(config: dict, run_dir: Path) -> None:
    """The snapshot must exist before any run output lands in the directory."""
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = run_dir / "config_snapshot.json"
    snapshot.write_text(json.dumps(config, sort_keys=True, indent=2))


def _configs_from(config: dict, grid: bool) -> list[PipelineConfig]:
    pipeline_cfg = dict(config["pipeline"])
    pipeline_cfg["corpora"] = tuple(pipeline_cfg.get("corpora", list(config["corpora"])))
    base = PipelineConfig(**pipeline_cfg)
    if not grid:
        return [base]
    k_values = tuple(config.get("grid", {}).get("k_values", (1, 2, 4, 8, 16, 32)))
    return grid_configs(base, k_values)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", "run_dir", required=True, type=click.Path())
@click.option("--grid", is_flag=True, help="Run the full config x k grid.")
@click.option("--replay", is_flag=True, help="Serve every exchange from recorded transcripts.")
@domain_errors
def run(config_path, dataset, run_dir, grid, replay):
    """Execute the staged pipeline over a benchmark dataset into a run directory."""
    config = _load_config(config_path)
    run_dir = Path(run_dir)
    _snapshot_config(config, run_dir)
    configs = _configs_from(config, grid)
    items = _load_items(dataset)
    pipeline = _build_pipeline(config, run_dir, replay)
    writer = RunWriter(run_dir)
    table = pipeline.run_benchmark(items, configs, writer=writer)
    (run_dir / "accuracy.json").write_text(json.dumps(table, sort_keys=True, indent=2))
    calls = pipeline.response_gateway.network_calls + (
        pipeline.filter_gateway.network_calls if pipeline.filter_gateway else 0
    )
    click.echo(
        f"{len(configs)} configs x {len(items)} items -> {run_dir / 'runs.jsonl'} "
        f"({calls} network calls)"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--runs", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--grid", is_flag=True)
@domain_errors
def replay(config_path, dataset, run_dir, grid):
    """Re-run a directory from transcripts and verify RunRecords are byte-identical."""
    config = _load_config(config_path)
    run_dir = Path(run_dir)
    recorded = RunWriter(run_dir).read_all()
    if not recorded:
        raise ConfigError(f"{run_dir} has no runs.jsonl to verify against")
    pipeline = _build_pipeline(config, run_dir, replay=True)
    configs = _configs_from(config, grid)
    items = _load_items(dataset)
    fresh = []
    for cfg in configs:
        for item in items:
            fresh.append(pipeline.run_pipeline(item, cfg))
    want = [json.dumps(r, sort_keys=True) for r in recorded]
    got = [json.dumps(r, sort_keys=True) for r in fresh]
    if want != got:
        mismatches = sum(1 for a, b in zip(want, got) if a != b) + abs(len(want) - len(got))
        raise ConfigError(f"replay mismatch: {mismatches} records differ from {run_dir}")
    calls = pipeline.response_gateway.network_calls
    click.echo(f"replay verified: {len(got)} records byte-identical, {calls} network calls")


@main.command()
@click.option("--runs", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
@domain_errors
def parse(run_dir, out_path):
    """Parse every RunRecord response into statements, citations, and references."""
    run_dir = Path(run_dir)
    out_path = Path(out_path) if out_path else run_dir / "parsed.jsonl"
    records = RunWriter(run_dir).read_all()
    with out_path.open("w", encoding="utf-8") as fh:
        for rec in records:
            text = rec.get("response_text") or ""
            refs, _ = parse_reference_section(text)
            statements = [
                Statement(
                    statement_id=f"{rec['run_id']}#s{i}",
                    owner="model_response",
                    text=sentence,
                )
                for i, sentence in enumerate(_sentences(response_body(text)))
            ]
            parsed = align_statements_to_refs(text, statements, refs)
            fh.write(
                json.dumps(
                    {
                        "run_id": rec["run_id"],
                        "item_id": rec["item_id"],
                        **parsed.to_record(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    click.echo(f"parsed {len(records)} responses -> {out_path}")


# -- annotation ----------------------------------------------------------------------


@main.command()
@click.option("--runs", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True))
@click.option("--db", "db_path", required=True, type=click.Path())
@click.option("--double-fraction", default=0.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@domain_errors
def tasks(run_dir, gold_path, db_path, double_fraction, seed):
    """Create annotation tasks from a run directory and gold must-have statements."""
    run_dir = Path(run_dir)
    records = RunWriter(run_dir).read_all()
    gold: dict[str, list[dict]] = {}
    for rec in load_jsonl(gold_path):
        gold.setdefault(rec["query_id"], []).append(
            {"statement_id": rec["statement_id"], "text": rec["text"]}
        )
    parsed = {}
    parsed_path = run_dir / "parsed.jsonl"
    if parsed_path.exists():
        parsed = {rec["run_id"]: rec for rec in load_jsonl(parsed_path)}
    store = AnnotationStore(db_path)
    counts = store.create_tasks(
        records, gold, parsed, double_fraction=double_fraction, seed=seed
    )
    click.echo("created tasks: " + ", ".join(f"{s}={n}" for s, n in counts.items()))


@main.command()
@click.option("--db", "db_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@domain_errors
def serve(db_path, host, port):
    """Serve the annotation REST API."""
    import uvicorn

    app = create_app(AnnotationStore(db_path))
    uvicorn.run(app, host=host, port=port)


# -- evaluation ----------------------------------------------------------------------


def _accuracy_grid(records: list[dict]) -> list[dict]:
    """Per (config label, k) accuracy cells from RunRecords, with non-RAG deltas."""
    from collections import defaultdict

    flags: dict[tuple[str, int], list[bool]] = defaultdict(list)
    for rec in records:
        cfg = PipelineConfig(**{**rec["config"], "corpora": tuple(rec["config"]["corpora"])})
        correct = (
            bool(rec.get("gold"))
            and rec.get("extracted_option") == rec.get("gold")
            and not rec.get("errors")
        )
        flags[(cfg.label(), cfg.k)].append(correct)
    baseline = None
    non_rag = [vs for (label, _), vs in flags.items() if label == "non_rag"]
    if non_rag:
        pooled = [v for vs in non_rag for v in vs]
        baseline = sum(pooled) / len(pooled)
    cells = []
    for (label, k), vs in sorted(flags.items()):
        acc = sum(vs) / len(vs)
        cells.append(
            {
                "config": label,
                "k": k,
                "accuracy": acc,
                "n": len(vs),
                "delta_vs_non_rag": None if baseline is None else acc - baseline,
                "correct_flags": vs,
            }
        )
    return cells


@main.command("eval")
@click.option("--labels", "labels_dir", required=True, type=click.Path(exists=True))
@click.option("--runs", "run_dir", default=None, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--k", "k_values", multiple=True, type=int, default=(16,), show_default=True)
@domain_errors
def eval_cmd(labels_dir, run_dir, report_path, k_values):
    """Compute every available metric from label files and write a report."""
    labels_dir = Path(labels_dir)
    metrics_out: list[dict] = []
    missing: list[str] = []

    if (labels_dir / "queries.jsonl").exists() and (labels_dir / "relevance.jsonl").exists():
        queries = load_query_relevance(labels_dir)
        for k in k_values:
            metrics_out.append(precision_at_k(queries, k).to_record())
            metrics_out.append(miss_at_k(queries, k).to_record())
            metrics_out.append(coverage_at_k(queries, k).to_record())
    else:
        missing.append("relevance")

    filter_path = labels_dir / "filter.jsonl"
    if filter_path.exists():
        rows = load_jsonl(filter_path)
        preds = [bool(r["predicted"]) for r in rows]
        gold = [bool(r["gold"]) for r in rows]
        for report in classifier_prf(preds, gold):
            metrics_out.append(report.to_record())
        for tag, value in FILTER_F1_REFERENCE.items():
            metrics_out.append(
                {
                    "metric": f"filter_f1_reference_{tag}",
                    "value": value,
                    "n": 0,
                    "stratum": {"reference_line": True},
                }
            )
    else:
        missing.append("filter")

    grid = []
    if run_dir:
        grid = _accuracy_grid(RunWriter(Path(run_dir)).read_all())

    report = {"metrics": metrics_out, "accuracy_grid": grid, "missing_inputs": missing}
    Path(report_path).write_text(json.dumps(report, sort_keys=True, indent=2))
    click.echo(f"{len(metrics_out)} metrics written to {report_path}")


def _fmt(value) -> str:
    return "missing" if value is None else f"{value:.3f}"


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--color/--no-color", default=None, help="Force ANSI coloring on or off.")
@domain_errors
def report(report_path, color):
    """Render a report file as a human-readable summary table."""
    data = json.loads(Path(report_path).read_text(encoding="utf-8"))
    if color is None:
        color = sys.stdout.isatty()

    click.echo("metric" + " " * 34 + "value      n")
    for rec in data.get("metrics", []):
        note = ""
        if rec.get("stratum", {}).get("reference_line"):
            note = "  (published baseline, reference line)"
        elif rec.get("undefined_reason"):
            note = f"  ({rec['undefined_reason']})"
        click.echo(f"{rec['metric']:<40}{_fmt(rec.get('value')):>7}  {rec.get('n', 0):>5}{note}")

    grid = data.get("accuracy_grid", [])
    if grid:
        click.echo("\naccuracy grid (delta vs non-RAG baseline)")
        baselines = {c["config"] for c in grid}
        click.echo(f"{'config':<16}{'k':>4}  {'accuracy':>8}  delta")
        for cell in grid:
            delta = cell.get("delta_vs_non_rag")
            if delta is None or cell["config"] == "non_rag":
                delta_text = "-"
            else:
                delta_text = f"{delta:+.3f}"
                if color:
                    tint = "green" if delta >= 0 else "red"
                    delta_text = click.style(delta_text, fg=tint)
            click.echo(
                f"{cell['config']:<16}{cell['k']:>4}  {cell['accuracy']:>8.3f}  {delta_text}"
            )
        pairs = data.get("significance", [])
        for pair in pairs:
            click.echo(
                f"McNemar {pair['a']} vs {pair['b']}: p = {pair['p_value']:.4g}"
            )
    for name in data.get("missing_inputs", []):
        click.echo(f"{name}: missing")


if __name__ == "__main__":
    main()
