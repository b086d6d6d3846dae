"""Pipeline execution: reformulate -> retrieve -> filter -> generate.

Four configurations (standard RAG, +filtering, +reformulation, combined) run
over free-text or multiple-choice queries and produce RunRecords. With a
recorded transcript store the whole pipeline is a pure function of
(query, config) and replays byte-identically with zero network calls.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .agreement import bootstrap_ci
from .corpus import PassageStore
from .gateway import PROFILES, ChatGateway, GatewayError
from .retriever import Bm25Index, DenseIndex, EmbeddingClient, RetrievalHit, merge_topk, search_bm25, search_dense

logger = logging.getLogger(__name__)

UNPARSED = "unparsed"
GRID_K_VALUES = (1, 2, 4, 8, 16, 32)
BENCHMARK_SAMPLE_CAP = 500


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    use_retrieval: bool = True
    use_filtering: bool = False
    use_reformulation: bool = False
    k: int = 16
    retriever: str = "bm25"
    response_profile: str = "primary"
    corpora: tuple[str, ...] = ("corpus",)
    filter_on_rationale: bool = False  # default filters on the original question

    def __post_init__(self):
        if (self.use_filtering or self.use_reformulation) and not self.use_retrieval:
            raise ConfigError("filtering/reformulation require retrieval to be enabled")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.retriever not in ("bm25", "dense"):
            raise ConfigError(f"unknown retriever {self.retriever!r}")
        if self.response_profile not in PROFILES:
            raise ConfigError(f"unknown response profile {self.response_profile!r}")

    def label(self) -> str:
        if not self.use_retrieval:
            return "non_rag"
        parts = ["rag"]
        if self.use_filtering:
            parts.append("filter")
        if self.use_reformulation:
            parts.append("reform")
        return "+".join(parts)

    def to_record(self) -> dict:
        return {
            "use_retrieval": self.use_retrieval,
            "use_filtering": self.use_filtering,
            "use_reformulation": self.use_reformulation,
            "k": self.k,
            "retriever": self.retriever,
            "response_profile": self.response_profile,
            "corpora": list(self.corpora),
            "filter_on_rationale": self.filter_on_rationale,
        }

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_record(), sort_keys=True).encode()
        ).hexdigest()[:12]


@dataclass
class BenchmarkItem:
    item_id: str
    question: str
    options: dict[str, str] = field(default_factory=dict)
    gold: str = ""
    dataset: str = "custom"

    def __post_init__(self):
        if self.options:
            if len(self.options) < 2:
                raise ConfigError(f"item {self.item_id}: need at least 2 options")
            if self.gold and self.gold not in self.options:
                raise ConfigError(f"item {self.item_id}: gold {self.gold!r} not among options")

    def rendered_question(self) -> str:
        if not self.options:
            return self.question
        lines = [self.question, ""]
        lines += [f"{letter}. {text}" for letter, text in sorted(self.options.items())]
        return "\n".join(lines)


# -- answer extraction ------------------------------------------------------------

_FINAL_ANSWER = re.compile(r"final answer\b", re.IGNORECASE)
_ANSWER_LINE = re.compile(r"^\s*\**answer\**\s*[:\-]\s*\(?([A-J])\)?\b", re.IGNORECASE)
_LETTER_TOKEN = re.compile(r"(?<![A-Za-z0-9])\(?([A-J])\)?(?![A-Za-z0-9])")


def extract_option(answer_text: str, options: dict[str, str]) -> str:
    """Deterministic option extraction cascade; returns UNPARSED rather than guessing.

    (1) option letter or option text following a "final answer" phrase;
    (2) last line starting with "Answer: X"; (3) last standalone option-letter
    token; (4) exact option-text occurrence (last one wins).
    """
    if not options:
        raise ConfigError("options must be non-empty")
    valid = set(options)

    m = _FINAL_ANSWER.search(answer_text)
    if m:
        window = answer_text[m.end() : m.end() + 200]
        lm = _LETTER_TOKEN.search(window)
        if lm and lm.group(1) in valid:
            return lm.group(1)
        hit = _match_option_text(window, options)
        if hit:
            return hit

    for line in reversed(answer_text.splitlines()):
        if not line.strip():
            continue
        am = _ANSWER_LINE.match(line)
        if am and am.group(1) in valid:
            return am.group(1)
        break

    letters = [m.group(1) for m in _LETTER_TOKEN.finditer(answer_text) if m.group(1) in valid]
    if letters:
        return letters[-1]

    hit = _match_option_text(answer_text, options)
    if hit:
        return hit
    return UNPARSED


def _match_option_text(text: str, options: dict[str, str]) -> str | None:
    lowered = text.lower()
    best: tuple[int, str] | None = None
    for letter, option_text in options.items():
        pos = lowered.rfind(option_text.lower())
        if pos >= 0 and (best is None or pos > best[0]):
            best = (pos, letter)
    return best[1] if best else None


# -- pipeline ---------------------------------------------------------------------


@dataclass
class Pipeline:
    """Wires corpora, retrievers, and gateways into the staged execution."""

    store: PassageStore
    bm25_indexes: dict[str, Bm25Index] = field(default_factory=dict)
    dense_indexes: dict[str, DenseIndex] = field(default_factory=dict)
    query_encoder: EmbeddingClient | None = None
    response_gateway: ChatGateway | None = None
    filter_gateway: ChatGateway | None = None

    def _filter_gw(self) -> ChatGateway:
        return self.filter_gateway or self.response_gateway

    # stage 1
    def reformulate_query(self, question: str) -> tuple[str, list[str]]:
        """Return the model's step-by-step rationale (used alone as the retrieval query)."""
        if not question:
            raise ConfigError("question must be non-empty")
        prompt = prompts.render_prompt("rationale_reformulation", {"question": question})
        profile = PROFILES["primary"]
        exchange = self.response_gateway.complete_validated(prompt, profile, "nonempty")
        return exchange.response_text, [exchange.exchange_id]

    # stage 2
    def retrieve(self, query: str, config: PipelineConfig) -> list[RetrievalHit]:
        per_corpus = []
        for name in config.corpora:
            if config.retriever == "bm25":
                index = self.bm25_indexes[name]
                per_corpus.append(search_bm25(index, query, config.k))
            else:
                index = self.dense_indexes[name]
                qvec = self.query_encoder.encode([query])[0]
                per_corpus.append(search_dense(index, qvec, config.k))
        if len(per_corpus) == 1:
            return per_corpus[0][: config.k]
        return merge_topk(per_corpus, config.k)

    # stage 3
    def filter_passages(
        self, question: str, hits: list[RetrievalHit]
    ) -> tuple[list[str], str, list[str]]:
        """Binary-screen each hit; returns (kept ids, status, exchange ids)."""
        if not hits:
            raise ConfigError("filter_passages requires at least one hit")
        gw = self._filter_gw()
        kept = []
        exchange_ids = []
        for hit in hits:
            passage, _ = self.store.get_passages([hit.passage_id])
            prompt = prompts.render_prompt(
                "evidence_filter", {"question": question, "passage": passage[0].text}
            )
            exchange = gw.complete_validated(prompt, PROFILES["deterministic"], "yes_no_token")
            exchange_ids.append(exchange.exchange_id)
            if exchange.response_text.strip().strip('".').lower() == "yes":
                kept.append(hit.passage_id)
        status = "ok" if kept else "all_filtered"
        return kept, status, exchange_ids

    # stage 4
    def _generation_prompt(
        self, question_text: str, context_ids: list[str], is_mcq: bool
    ) -> str:
        instruction = prompts.MCQ_INSTRUCTION if is_mcq else prompts.PATIENT_QUERY_INSTRUCTION
        if context_ids:
            passages, _ = self.store.get_passages(context_ids)
            return prompts.render_prompt(
                "response_rag",
                {
                    "task_instruction": instruction,
                    "documents": prompts.build_document_blocks(passages),
                    "query": question_text,
                },
            )
        return prompts.render_prompt(
            "response_nonrag",
            {"task_instruction": instruction, "query": question_text},
        )

    def generate_answer(
        self,
        question_text: str,
        context_ids: list[str],
        config: PipelineConfig,
        is_mcq: bool,
    ) -> tuple[str, list[str]]:
        prompt = self._generation_prompt(question_text, context_ids, is_mcq)
        params = PROFILES[config.response_profile]
        exchange = self.response_gateway.complete_validated(
            prompt, params, "reference_section_present"
        )
        return exchange.response_text, [exchange.exchange_id]

    def run_pipeline(self, item: BenchmarkItem, config: PipelineConfig) -> dict:
        """Execute the staged pipeline; stage failures are recorded, not raised."""
        record: dict = {
            "run_id": hashlib.sha256(f"{item.item_id}:{config.digest()}".encode()).hexdigest()[:16],
            "item_id": item.item_id,
            "dataset": item.dataset,
            "question": item.question,
            "options": item.options,
            "gold": item.gold,
            "config": config.to_record(),
            "config_digest": config.digest(),
            "rationale": None,
            "retrieval_query": None,
            "retrieved": [],
            "kept_after_filter": [],
            "all_filtered": False,
            "response_text": None,
            "references_raw": None,
            "extracted_option": None,
            "exchange_ids": [],
            "errors": [],
        }
        question_text = item.rendered_question()
        retrieval_query = question_text
        try:
            if config.use_reformulation:
                rationale, ex_ids = self.reformulate_query(question_text)
                record["rationale"] = rationale
                record["exchange_ids"] += ex_ids
                retrieval_query = rationale  # rationale only, never concatenated
        except GatewayError as exc:
            record["errors"].append({"stage": "reformulate", "error": str(exc)})
            return record

        hits: list[RetrievalHit] = []
        if config.use_retrieval:
            record["retrieval_query"] = retrieval_query
            try:
                hits = self.retrieve(retrieval_query, config)
                record["retrieved"] = [h.to_record() for h in hits]
            except Exception as exc:
                record["errors"].append({"stage": "retrieve", "error": str(exc)})
                return record

        kept_ids = [h.passage_id for h in hits]
        if config.use_filtering and hits:
            filter_query = record["rationale"] if (
                config.filter_on_rationale and record["rationale"]
            ) else question_text
            try:
                kept_ids, status, ex_ids = self.filter_passages(filter_query, hits)
                record["exchange_ids"] += ex_ids
                record["all_filtered"] = status == "all_filtered"
            except GatewayError as exc:
                record["errors"].append({"stage": "filter", "error": str(exc)})
                return record
        record["kept_after_filter"] = kept_ids

        try:
            response_text, ex_ids = self.generate_answer(
                question_text, kept_ids, config, is_mcq=bool(item.options)
            )
            record["response_text"] = response_text
            record["exchange_ids"] += ex_ids
        except GatewayError as exc:
            record["errors"].append({"stage": "generate", "error": str(exc)})
            return record

        from .citations import parse_reference_section, response_body  # cycle-free local import

        refs, info = parse_reference_section(response_text)
        record["references_raw"] = None if info["missing_section"] else "\n".join(
            f"{r.ref_ordinal}. {r.raw_text}" for r in refs
        )

        if item.options:
            option = extract_option(response_body(response_text), item.options)
            if option == UNPARSED:
                # one validated resample of the same prompt before giving up;
                # still never a guess
                try:
                    prompt = self._generation_prompt(
                        question_text, kept_ids, is_mcq=True
                    )
                    retry = self.response_gateway.complete_validated(
                        prompt,
                        PROFILES[config.response_profile],
                        "option_letter_parseable",
                    )
                    record["exchange_ids"].append(retry.exchange_id)
                    record["response_text"] = retry.response_text
                    option = extract_option(response_body(retry.response_text), item.options)
                except GatewayError:
                    option = UNPARSED
            record["extracted_option"] = option
        return record

    def run_benchmark(
        self,
        items: list[BenchmarkItem],
        configs: list[PipelineConfig],
        writer: "RunWriter | None" = None,
        ci_replicates: int = 1000,
        seed: int = 0,
    ) -> dict:
        """Accuracy table over the config grid; unparsed or failed items count incorrect."""
        if not items:
            raise ConfigError("items must be non-empty")
        table: dict = {"cells": []}
        for config in configs:
            correct_flags = []
            for item in items:
                record = self.run_pipeline(item, config)
                if writer:
                    writer.write(record)
                correct_flags.append(
                    bool(item.gold)
                    and record["extracted_option"] == item.gold
                    and not record["errors"]
                )
            accuracy = sum(correct_flags) / len(correct_flags)
            low, high = bootstrap_ci(
                lambda xs: sum(xs) / len(xs),
                [1.0 if c else 0.0 for c in correct_flags],
                replicates=ci_replicates,
                seed=seed,
            )
            table["cells"].append(
                {
                    "config": config.label(),
                    "k": config.k,
                    "accuracy": accuracy,
                    "ci_low": low,
                    "ci_high": high,
                    "n": len(items),
                    "correct_flags": correct_flags,
                }
            )
        return table


def sample_items(items: list[BenchmarkItem], cap: int = BENCHMARK_SAMPLE_CAP, seed: int = 0) -> list[BenchmarkItem]:
    """Uniform sample without replacement when a dataset exceeds the cap; seed recorded by caller."""
    if len(items) <= cap:
        return list(items)
    import numpy as np

    rng = np.random.default_rng(seed)
    idx = rng.choice(len(items), size=cap, replace=False)
    return [items[i] for i in sorted(idx)]


def grid_configs(
    base: PipelineConfig | None = None, k_values: tuple[int, ...] = GRID_K_VALUES
) -> list[PipelineConfig]:
    """The full 4-configuration x k grid."""
    base_kwargs = (base.to_record() if base else PipelineConfig().to_record())
    configs = []
    for use_filtering, use_reformulation in (
        (False, False),
        (True, False),
        (False, True),
        (True, True),
    ):
        for k in k_values:
            kwargs = dict(base_kwargs)
            kwargs.update(
                use_retrieval=True,
                use_filtering=use_filtering,
                use_reformulation=use_reformulation,
                k=k,
            )
            kwargs["corpora"] = tuple(kwargs["corpora"])
            configs.append(PipelineConfig(**kwargs))
    return configs


class RunWriter:
    """Append-only, deterministic JSONL persistence of RunRecords."""

    def __init__(self, run_dir: str | Path, name: str = "runs.jsonl"):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.run_dir / name

    def write(self, record: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def read_all(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [json.loads(line) for line in self.path.read_text(encoding="utf-8").splitlines() if line.strip()]
