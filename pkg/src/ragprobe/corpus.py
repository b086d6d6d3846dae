"""Document ingestion, chunking, and the addressable passage store.

Corpora arrive as line-delimited JSON records (one document per line).
Documents are chunked into passages at paragraph boundaries first and
sentence boundaries second; passages are exact, non-overlapping spans of
the body, so concatenating them in order reconstructs the document.
"""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

SOURCES = ("pubmed", "statpearls", "wikipedia", "textbook", "guideline", "other")

DEFAULT_MAX_CHUNK_CHARS = 1500

_PARAGRAPH_SEP = re.compile(r"\n[ \t]*\n")
_SENTENCE_SEP = re.compile(r"(?<=[.!?])\s+")


class CorpusError(Exception):
    """Raised for unrecoverable ingest/store problems."""


@dataclass
class Document:
    doc_id: str
    title: str
    body: str
    source: str
    metadata: dict[str, str] = field(default_factory=dict)
    prechunked: bool = False

    def __post_init__(self):
        if not self.doc_id:
            raise CorpusError("document missing doc_id")
        if not self.body:
            raise CorpusError(f"document {self.doc_id!r} has an empty body")
        if self.source not in SOURCES:
            raise CorpusError(
                f"document {self.doc_id!r} has unknown source {self.source!r}; "
                f"expected one of {SOURCES}"
            )


@dataclass
class Passage:
    passage_id: str
    doc_id: str
    seq: int
    text: str
    source: str
    metadata: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "passage_id": self.passage_id,
            "doc_id": self.doc_id,
            "seq": self.seq,
            "text": self.text,
            "source": self.source,
            "metadata": self.metadata,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Passage":
        return cls(
            passage_id=rec["passage_id"],
            doc_id=rec["doc_id"],
            seq=rec["seq"],
            text=rec["text"],
            source=rec["source"],
            metadata=dict(rec.get("metadata", {})),
        )


@dataclass
class CorpusManifest:
    corpus_name: str
    document_count: int
    passage_count: int
    source_histogram: dict[str, int]
    checksum: str
    malformed: list[dict] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "corpus_name": self.corpus_name,
            "document_count": self.document_count,
            "passage_count": self.passage_count,
            "source_histogram": dict(self.source_histogram),
            "checksum": self.checksum,
            "malformed": self.malformed,
        }


def _split_keep(text: str, sep: re.Pattern) -> list[str]:
    """Split text after each separator match; pieces concatenate back to text."""
    pieces = []
    prev = 0
    for m in sep.finditer(text):
        pieces.append(text[prev : m.end()])
        prev = m.end()
    if prev < len(text):
        pieces.append(text[prev:])
    return pieces


def _pack(pieces: list[str], limit: int) -> list[str]:
    """Greedily pack pieces into chunks no longer than limit."""
    chunks: list[str] = []
    current = ""
    for piece in pieces:
        if current and len(current) + len(piece) > limit:
            chunks.append(current)
            current = ""
        if len(piece) > limit:
            if current:
                chunks.append(current)
                current = ""
            chunks.extend(_oversize(piece, limit))
        else:
            current += piece
    if current:
        chunks.append(current)
    return chunks


def _oversize(piece: str, limit: int) -> list[str]:
    """Break an over-limit piece at sentence boundaries, hard-slicing as a last resort."""
    sentences = _split_keep(piece, _SENTENCE_SEP)
    if len(sentences) > 1:
        return _pack(sentences, limit)
    return [piece[i : i + limit] for i in range(0, len(piece), limit)]


def chunk_document(doc: Document, max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS) -> list[Passage]:
    """Chunk a document body into passages covering every body character exactly once."""
    if max_chunk_chars < 200:
        raise ValueError(f"max_chunk_chars must be >= 200, got {max_chunk_chars}")
    if doc.prechunked:
        texts = [doc.body]
    else:
        texts = _pack(_split_keep(doc.body, _PARAGRAPH_SEP), max_chunk_chars)
    passages = []
    for seq, text in enumerate(texts):
        passages.append(
            Passage(
                passage_id=f"{doc.doc_id}#{seq}",
                doc_id=doc.doc_id,
                seq=seq,
                text=text,
                source=doc.source,
                metadata={"title": doc.title, **doc.metadata},
            )
        )
    return passages


class PassageStore:
    """Append-only during ingest, immutable afterwards; safe for concurrent readers."""

    def __init__(self, corpus_name: str = "corpus", max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS):
        self.corpus_name = corpus_name
        self.max_chunk_chars = max_chunk_chars
        self.documents: dict[str, Document] = {}
        self.passages: dict[str, Passage] = {}
        self._order: list[str] = []  # passage ids in ingest order

    def __len__(self) -> int:
        return len(self.passages)

    def iter_passages(self):
        for pid in self._order:
            yield self.passages[pid]

    def add_document(self, doc: Document) -> list[Passage]:
        if doc.doc_id in self.documents:
            raise CorpusError(
                f"duplicate doc_id {doc.doc_id!r}: already ingested as "
                f"{self.documents[doc.doc_id].title!r}, rejecting new record {doc.title!r}"
            )
        passages = chunk_document(doc, self.max_chunk_chars)
        self.documents[doc.doc_id] = doc
        for p in passages:
            self.passages[p.passage_id] = p
            self._order.append(p.passage_id)
        return passages

    def merge(self, other: "PassageStore") -> None:
        """Absorb another store's documents and passages; duplicate doc_ids reject."""
        for doc_id, doc in other.documents.items():
            if doc_id in self.documents:
                raise CorpusError(
                    f"duplicate doc_id {doc_id!r} while merging corpus {other.corpus_name!r}"
                )
            self.documents[doc_id] = doc
        for pid in other._order:
            self.passages[pid] = other.passages[pid]
            self._order.append(pid)

    def ingest_documents(self, path: str | Path, source: str) -> CorpusManifest:
        """Ingest a line-delimited corpus file. Malformed lines are reported in the manifest."""
        path = Path(path)
        if not path.exists():
            raise CorpusError(f"corpus file not found: {path}")
        malformed: list[dict] = []
        count = 0
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    malformed.append({"line": lineno, "error": f"invalid json: {exc}"})
                    continue
                try:
                    doc = Document(
                        doc_id=rec.get("doc_id", ""),
                        title=rec.get("title", ""),
                        body=rec.get("body", ""),
                        source=rec.get("source", source),
                        metadata=dict(rec.get("metadata", {})),
                        prechunked=bool(rec.get("prechunked", False)),
                    )
                except CorpusError as exc:
                    if "duplicate" in str(exc):
                        raise
                    malformed.append({"line": lineno, "error": str(exc)})
                    continue
                self.add_document(doc)
                count += 1
        return self.manifest(malformed=malformed)

    def manifest(self, malformed: list[dict] | None = None) -> CorpusManifest:
        histogram = Counter(p.source for p in self.passages.values())
        digest = hashlib.sha256()
        for pid in sorted(self.passages):
            digest.update(pid.encode())
            digest.update(self.passages[pid].text.encode())
        return CorpusManifest(
            corpus_name=self.corpus_name,
            document_count=len(self.documents),
            passage_count=len(self.passages),
            source_histogram=dict(histogram),
            checksum=digest.hexdigest(),
            malformed=malformed or [],
        )

    def get_passages(self, ids: list[str], lenient: bool = False) -> tuple[list[Passage], list[str]]:
        """Look up passages in request order. Returns (found, missing ids)."""
        found = []
        missing = []
        for pid in ids:
            if pid in self.passages:
                found.append(self.passages[pid])
            else:
                missing.append(pid)
        if missing and not lenient:
            raise CorpusError(f"unknown passage ids: {missing}")
        return found, missing

    def export_records(self) -> list[dict]:
        return [
            {
                "doc_id": d.doc_id,
                "title": d.title,
                "body": d.body,
                "source": d.source,
                "metadata": d.metadata,
                "prechunked": d.prechunked,
            }
            for d in self.documents.values()
        ]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / "documents.jsonl").open("w", encoding="utf-8") as fh:
            for rec in self.export_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with (directory / "passages.jsonl").open("w", encoding="utf-8") as fh:
            for p in self.iter_passages():
                fh.write(json.dumps(p.to_record(), sort_keys=True) + "\n")
        with (directory / "manifest.json").open("w", encoding="utf-8") as fh:
            json.dump(self.manifest().to_record(), fh, sort_keys=True, indent=2)

    @classmethod
    def load(cls, directory: str | Path, corpus_name: str = "corpus") -> "PassageStore":
        directory = Path(directory)
        store = cls(corpus_name=corpus_name)
        with (directory / "documents.jsonl").open(encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                store.documents[rec["doc_id"]] = Document(
                    doc_id=rec["doc_id"],
                    title=rec["title"],
                    body=rec["body"],
                    source=rec["source"],
                    metadata=dict(rec.get("metadata", {})),
                    prechunked=bool(rec.get("prechunked", False)),
                )
        with (directory / "passages.jsonl").open(encoding="utf-8") as fh:
            for line in fh:
                p = Passage.from_record(json.loads(line))
                store.passages[p.passage_id] = p
                store._order.append(p.passage_id)
        return store
