"""Lexical BM25 and dense retrieval over the passage store.

BM25 is the Okapi variant with a floored IDF:
    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)
so very common terms never go negative. Defaults k1=1.2, b=0.75.
Tokenization is lowercase split on non-alphanumerics, digits kept,
no stemming or stopwords, which keeps scores reproducible by hand.

Dense search is exhaustive inner product over unit vectors; the query
encoder lives behind an HTTP endpoint (see EmbeddingClient).
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Passage

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class RetrievalHit:
    passage_id: str
    score: float
    rank: int

    def to_record(self) -> dict:
        return {"passage_id": self.passage_id, "score": self.score, "rank": self.rank}

    @classmethod
    def from_record(cls, rec: dict) -> "RetrievalHit":
        return cls(passage_id=rec["passage_id"], score=rec["score"], rank=rec["rank"])


@dataclass
class Bm25Index:
    vocabulary: dict[str, int]
    postings: list[list[tuple[int, int]]]  # term_id -> [(passage ordinal, tf)]
    doc_lengths: list[int]
    avg_doc_length: float
    k1: float
    b: float
    passage_ids: list[str]
    checksum: str = ""

    @property
    def size(self) -> int:
        return len(self.passage_ids)

    def idf(self, term: str) -> float:
        tid = self.vocabulary.get(term)
        if tid is None:
            return 0.0
        df = len(self.postings[tid])
        return math.log((self.size - df + 0.5) / (df + 0.5) + 1.0)

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": INDEX_FORMAT_VERSION,
            "kind": "bm25",
            "checksum": self.checksum,
            "k1": self.k1,
            "b": self.b,
            "vocabulary": self.vocabulary,
            "postings": self.postings,
            "doc_lengths": self.doc_lengths,
            "avg_doc_length": self.avg_doc_length,
            "passage_ids": self.passage_ids,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Bm25Index":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format_version") != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index version {payload.get('format_version')}")
        return cls(
            vocabulary=payload["vocabulary"],
            postings=[[tuple(entry) for entry in plist] for plist in payload["postings"]],
            doc_lengths=payload["doc_lengths"],
            avg_doc_length=payload["avg_doc_length"],
            k1=payload["k1"],
            b=payload["b"],
            passage_ids=payload["passage_ids"],
            checksum=payload.get("checksum", ""),
        )


def build_bm25_index(
    passages: Iterable[Passage],
    k1: float = 1.2,
    b: float = 0.75,
    checksum: str = "",
) -> Bm25Index:
    vocabulary: dict[str, int] = {}
    postings: list[dict[int, int]] = []
    doc_lengths: list[int] = []
    passage_ids: list[str] = []
    for ordinal, passage in enumerate(passages):
        tokens = tokenize(passage.text)
        doc_lengths.append(len(tokens))
        passage_ids.append(passage.passage_id)
        for tok in tokens:
            tid = vocabulary.get(tok)
            if tid is None:
                tid = len(vocabulary)
                vocabulary[tok] = tid
                postings.append({})
            postings[tid][ordinal] = postings[tid].get(ordinal, 0) + 1
    if not passage_ids:
        raise ValueError("cannot build a BM25 index from an empty passage stream")
    return Bm25Index(
        vocabulary=vocabulary,
        postings=[sorted(p.items()) for p in postings],
        doc_lengths=doc_lengths,
        avg_doc_length=sum(doc_lengths) / len(doc_lengths),
        k1=k1,
        b=b,
        passage_ids=passage_ids,
        checksum=checksum,
    )


def search_bm25(index: Bm25Index, query: str, k: int) -> list[RetrievalHit]:
    """Top-k passages by Okapi BM25; zero-scoring passages are never returned."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    terms = tokenize(query)
    if not terms:
        logger.warning("query tokenized to zero terms: %r", query)
        return []
    scores: dict[int, float] = {}
    seen: set[str] = set()
    for term in terms:
        if term in seen:
            continue
        seen.add(term)
        tid = index.vocabulary.get(term)
        if tid is None:
            continue
        qtf = terms.count(term)
        idf = index.idf(term)
        for ordinal, tf in index.postings[tid]:
            dl = index.doc_lengths[ordinal]
            denom = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
            scores[ordinal] = scores.get(ordinal, 0.0) + qtf * idf * tf * (index.k1 + 1.0) / denom
    ranked = sorted(scores.items(), key=lambda it: (-it[1], index.passage_ids[it[0]]))
    return [
        RetrievalHit(passage_id=index.passage_ids[ordinal], score=score, rank=rank)
        for rank, (ordinal, score) in enumerate(ranked[:k], start=1)
    ]


@dataclass
class DenseIndex:
    vectors: np.ndarray  # (n, d), unit-normalized rows
    passage_ids: list[str]
    endpoint: str = ""
    checksum: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.passage_ids):
            raise ValueError("vectors must be (n_passages, d)")
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("stored vectors must be unit-normalized within 1e-6")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            format_version=INDEX_FORMAT_VERSION,
            vectors=self.vectors,
            passage_ids=np.asarray(self.passage_ids, dtype=object),
            endpoint=self.endpoint,
            checksum=self.checksum,
        )

    @classmethod
    def load(cls, path: str | Path) -> "DenseIndex":
        payload = np.load(path, allow_pickle=True)
        version = int(payload["format_version"])
        if version != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index format version {version}")
        return cls(
            vectors=payload["vectors"],
            passage_ids=[str(p) for p in payload["passage_ids"]],
            endpoint=str(payload["endpoint"]),
            checksum=str(payload["checksum"]),
        )


def normalize(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return vectors / norms


def search_dense(index: DenseIndex, query_vector: np.ndarray, k: int) -> list[RetrievalHit]:
    """Exhaustive top-k by inner product (cosine for unit vectors)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_vector = np.asarray(query_vector, dtype=np.float64)
    if query_vector.shape != (index.dim,):
        raise ValueError(f"query vector dim {query_vector.shape} != index dim ({index.dim},)")
    scores = index.vectors @ query_vector
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], index.passage_ids[i]))
    return [
        RetrievalHit(passage_id=index.passage_ids[i], score=float(scores[i]), rank=rank)
        for rank, i in enumerate(order[:k], start=1)
    ]


def merge_topk(per_corpus_hits: Sequence[Sequence[RetrievalHit]], k: int) -> list[RetrievalHit]:
    """Global top-k across corpora; ties go to the first-declared corpus, then passage_id."""
    pool = [
        (hit, corpus_idx)
        for corpus_idx, hits in enumerate(per_corpus_hits)
        for hit in hits
    ]
    pool.sort(key=lambda it: (-it[0].score, it[1], it[0].passage_id))
    return [
        RetrievalHit(passage_id=hit.passage_id, score=hit.score, rank=rank)
        for rank, (hit, _) in enumerate(pool[:k], start=1)
    ]


class EmbeddingClient:
    """Batched text-to-vector client: POST {"texts": [...]} -> {"vectors": [[...], ...]}.

    Vectors are normalized on receipt. MedCPT-style asymmetric encoders map to
    two instances with different URLs.
    """

    def __init__(self, url: str, batch_size: int = 32, timeout: float = 30.0, transport=None):
        self.url = url
        self.batch_size = batch_size
        self.timeout = timeout
        self._transport = transport

    def encode(self, texts: list[str]) -> np.ndarray:
        import httpx

        vectors: list[list[float]] = []
        client_kwargs = {"timeout": self.timeout}
        if self._transport is not None:
            client_kwargs["transport"] = self._transport
        with httpx.Client(**client_kwargs) as client:
            for start in range(0, len(texts), self.batch_size):
                batch = texts[start : start + self.batch_size]
                resp = client.post(self.url, json={"texts": batch})
                resp.raise_for_status()
                vectors.extend(resp.json()["vectors"])
        return normalize(np.asarray(vectors, dtype=np.float64))


def build_dense_index(
    passages: Iterable[Passage],
    encoder: EmbeddingClient,
    checksum: str = "",
) -> DenseIndex:
    passages = list(passages)
    if not passages:
        raise ValueError("cannot build a dense index from an empty passage stream")
    vectors = encoder.encode([p.text for p in passages])
    return DenseIndex(
        vectors=vectors,
        passage_ids=[p.passage_id for p in passages],
        endpoint=encoder.url,
        checksum=checksum,
    )
