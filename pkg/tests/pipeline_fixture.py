"""Scripted-endpoint benchmark fixture: a 20-item MCQ set, a small corpus,
and a deterministic prompt-driven fake chat endpoint."""
import hashlib

from ragprobe.corpus import Document, PassageStore
from ragprobe.gateway import ChatGateway, ScriptedTransport, TranscriptStore
from ragprobe.pipeline import BenchmarkItem, Pipeline
from ragprobe.retriever import build_bm25_index

TOPIC_WORDS = [
    "fever", "cough", "anemia", "sepsis", "glucose", "insulin", "cardiac",
    "renal", "biopsy", "therapy",
]

# sentinels that steer the scripted endpoint
FILTER_ALL_SENTINEL = "zzzfilterall"
UNPARSED_SENTINEL = "zzzunparse"

OPTIONS = {"A": "aspirin", "B": "metformin", "C": "insulin", "D": "biopsy"}


def build_benchmark() -> list[BenchmarkItem]:
    items = []
    for i in range(20):
        word = TOPIC_WORDS[i % len(TOPIC_WORDS)]
        extra = ""
        if i == 5:
            extra = f" {FILTER_ALL_SENTINEL}"
        if i == 7:
            extra = f" {UNPARSED_SENTINEL}"
        items.append(
            BenchmarkItem(
                item_id=f"it{i:02d}",
                question=f"What best manages {word} in case it{i:02d}?{extra}",
                options=dict(OPTIONS),
                gold="ABCD"[i % 4],
                dataset="scripted",
            )
        )
    return items


def build_corpus() -> PassageStore:
    store = PassageStore()
    for i, word in enumerate(TOPIC_WORDS * 3):
        store.add_document(
            Document(
                doc_id=f"doc{i:02d}",
                title=f"Management of {word} ({i})",
                body=f"Patients with {word} respond to {OPTIONS['ABCD'[i % 4]]} therapy. "
                f"Evidence summary {i}.",
                source="pubmed",
            )
        )
    return store


def scripted_handler(prompt: str, params) -> str:
    """Pure function of the prompt, so replay is byte-identical."""
    digest = hashlib.sha256(prompt.encode()).hexdigest()
    if "supporting evidence for the query" in prompt:
        return "No" if FILTER_ALL_SENTINEL in prompt else "Yes"
    if "clinical decision-making task" in prompt:
        return f"Step 1: the case involves fever cough anemia therapy. Token {digest[:4]}."
    if UNPARSED_SENTINEL in prompt:
        return "All options are equally plausible here.\n\n### References\n1. Unhelpful source."
    letter = "ABCD"[int(digest[0], 16) % 4]
    return (
        f"Reasoning sentence with evidence [1]. The final answer is ({letter}).\n\n"
        f"### References\n1. Reference title {digest[:6]}."
    )


def build_pipeline(transcript_path=None, replay: bool = False) -> Pipeline:
    store = build_corpus()
    transcripts = TranscriptStore(transcript_path)
    transport = None if replay else ScriptedTransport(handler=scripted_handler)
    gateway = ChatGateway(transport=transport, store=transcripts, replay=replay)
    return Pipeline(
        store=store,
        bm25_indexes={"corpus": build_bm25_index(store.iter_passages())},
        response_gateway=gateway,
        filter_gateway=gateway,
    )
