"""Annotation task queue and label intake.

Tasks for the four stages (relevance, selection, factuality, completeness)
are persisted in an embedded sqlite store. Claims are atomic compare-and-set
operations, accepted submissions are append-only, and exports are a pure
function of store state. A FastAPI app exposes the REST surface; annotators
authenticate with per-annotator bearer tokens.
"""
from __future__ import annotations

import json
import sqlite3
import threading
import time
import uuid
from pathlib import Path

import numpy as np

from .agreement import krippendorff_alpha

STAGES = ("relevance", "selection", "factuality", "completeness")
SUPPORT_LEVELS = ("full", "partial", "none")
SCHEMA_VERSION = 1
DEFAULT_LEASE_SECONDS = 24 * 3600


class ServiceError(Exception):
    def __init__(self, message: str, status_code: int = 400):
        super().__init__(message)
        self.status_code = status_code


_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT);
CREATE TABLE IF NOT EXISTS annotators (
    annotator_id TEXT PRIMARY KEY,
    display_name TEXT NOT NULL,
    stages TEXT NOT NULL,
    token TEXT NOT NULL UNIQUE
);
CREATE TABLE IF NOT EXISTS tasks (
    task_id TEXT PRIMARY KEY,
    stage TEXT NOT NULL,
    payload TEXT NOT NULL,
    expected_labels INTEGER NOT NULL,
    required_annotations INTEGER NOT NULL DEFAULT 1,
    created_seq INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS claims (
    task_id TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    claimed_at REAL NOT NULL,
    released INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY (task_id, annotator_id)
);
CREATE TABLE IF NOT EXISTS submissions (
    submission_id TEXT PRIMARY KEY,
    task_id TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    role TEXT NOT NULL DEFAULT 'primary',
    labels TEXT NOT NULL,
    submitted_at REAL NOT NULL
);
"""


def _expected_labels(stage: str, payload: dict) -> int:
    if stage == "relevance":
        return len(payload["passages"]) * len(payload["must_have_statements"])
    if stage == "selection":
        return len(payload["references"])
    if stage == "factuality":
        return len(payload["statements"])
    if stage == "completeness":
        return len(payload["must_have_statements"])
    raise ServiceError(f"unknown stage {stage!r}")


class AnnotationStore:
    """Embedded transactional store behind the REST API; safe for concurrent annotators."""

    def __init__(self, path: str | Path = ":memory:", lease_seconds: float = DEFAULT_LEASE_SECONDS):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.Lock()
        self.lease_seconds = lease_seconds
        with self._lock:
            self._conn.executescript(_SCHEMA)
            cur = self._conn.execute("SELECT value FROM meta WHERE key='schema_version'")
            row = cur.fetchone()
            if row is None:
                self._conn.execute(
                    "INSERT INTO meta VALUES ('schema_version', ?)", (str(SCHEMA_VERSION),)
                )
            elif int(row["value"]) != SCHEMA_VERSION:
                raise ServiceError(f"unsupported schema version {row['value']}")
            self._conn.commit()

    # -- annotators ------------------------------------------------------------

    def register_annotator(
        self, annotator_id: str, display_name: str, stages: list[str], token: str | None = None
    ) -> str:
        for stage in stages:
            if stage not in STAGES:
                raise ServiceError(f"unknown stage {stage!r}")
        token = token or uuid.uuid4().hex
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO annotators VALUES (?, ?, ?, ?)",
                (annotator_id, display_name, json.dumps(stages), token),
            )
            self._conn.commit()
        return token

    def annotator_by_token(self, token: str) -> dict | None:
        row = self._conn.execute(
            "SELECT * FROM annotators WHERE token = ?", (token,)
        ).fetchone()
        if row is None:
            return None
        return {
            "annotator_id": row["annotator_id"],
            "display_name": row["display_name"],
            "stages": json.loads(row["stages"]),
        }

    def _permitted(self, annotator_id: str, stage: str) -> bool:
        row = self._conn.execute(
            "SELECT stages FROM annotators WHERE annotator_id = ?", (annotator_id,)
        ).fetchone()
        return row is not None and stage in json.loads(row["stages"])

    # -- task creation ---------------------------------------------------------

    def add_task(
        self, stage: str, payload: dict, required_annotations: int = 1, task_id: str | None = None
    ) -> str:
        if stage not in STAGES:
            raise ServiceError(f"unknown stage {stage!r}")
        if required_annotations not in (1, 2):
            raise ServiceError("required_annotations must be 1 or 2")
        task_id = task_id or f"{stage}-{uuid.uuid4().hex[:12]}"
        expected = _expected_labels(stage, payload)
        with self._lock:
            seq = self._conn.execute("SELECT COUNT(*) AS c FROM tasks").fetchone()["c"]
            self._conn.execute(
                "INSERT INTO tasks VALUES (?, ?, ?, ?, ?, ?)",
                (task_id, stage, json.dumps(payload, sort_keys=True), expected,
                 required_annotations, seq),
            )
            self._conn.commit()
        return task_id

    def create_tasks(
        self,
        run_records: list[dict],
        gold_statements: dict[str, list[dict]],
        parsed_responses: dict[str, dict] | None = None,
        double_fraction: float = 0.0,
        seed: int = 0,
    ) -> dict[str, int]:
        """Derive stage tasks from pipeline artifacts.

        One relevance task per query, one selection task per RAG response,
        factuality tasks per response with parsed statements, completeness per
        (model, query). A seeded uniform sample of the created tasks is
        flagged for double annotation.
        """
        parsed_responses = parsed_responses or {}
        counts = {stage: 0 for stage in STAGES}
        created: list[str] = []
        seen_queries: set[str] = set()
        for rec in run_records:
            query_id = rec["item_id"]
            model_id = rec["config"].get("response_profile", "model")
            passages = rec.get("passage_payload") or [
                {"passage_id": h["passage_id"], "text": "", "title": ""}
                for h in rec.get("retrieved", [])
            ]
            must_have = gold_statements.get(query_id, [])
            if rec["config"]["use_retrieval"] and query_id not in seen_queries and must_have:
                seen_queries.add(query_id)
                tid = self.add_task(
                    "relevance",
                    {
                        "query_id": query_id,
                        "question": rec["question"],
                        "passages": passages,
                        "must_have_statements": must_have,
                    },
                )
                created.append(tid)
                counts["relevance"] += 1
            parsed = parsed_responses.get(rec["run_id"], {})
            references = parsed.get("references", [])
            if rec["config"]["use_retrieval"] and references:
                tid = self.add_task(
                    "selection",
                    {
                        "query_id": query_id,
                        "model_id": model_id,
                        "references": references,
                        "passages": passages,
                    },
                )
                created.append(tid)
                counts["selection"] += 1
            statements = parsed.get("body_statements", [])
            if statements:
                tid = self.add_task(
                    "factuality",
                    {
                        "query_id": query_id,
                        "model_id": model_id,
                        "question": rec["question"],
                        "response_text": rec.get("response_text", ""),
                        "statements": statements,
                    },
                )
                created.append(tid)
                counts["factuality"] += 1
            if must_have:
                tid = self.add_task(
                    "completeness",
                    {
                        "query_id": query_id,
                        "model_id": model_id,
                        "response_text": rec.get("response_text", ""),
                        "must_have_statements": must_have,
                    },
                )
                created.append(tid)
                counts["completeness"] += 1
        if double_fraction > 0 and created:
            rng = np.random.default_rng(seed)
            n_double = int(round(len(created) * double_fraction))
            chosen = rng.choice(len(created), size=n_double, replace=False)
            with self._lock:
                for i in chosen:
                    self._conn.execute(
                        "UPDATE tasks SET required_annotations = 2 WHERE task_id = ?",
                        (created[i],),
                    )
                self._conn.commit()
        return counts

    # -- claiming ---------------------------------------------------------------

    def release_expired_claims(self, now: float | None = None) -> int:
        """Return idle claimed tasks to the queue (claims past the lease, no submission)."""
        now = now if now is not None else time.time()
        with self._lock:
            cur = self._conn.execute(
                """
                UPDATE claims SET released = 1
                WHERE released = 0 AND claimed_at < ?
                  AND NOT EXISTS (
                    SELECT 1 FROM submissions s
                    WHERE s.task_id = claims.task_id AND s.annotator_id = claims.annotator_id
                  )
                """,
                (now - self.lease_seconds,),
            )
            self._conn.commit()
            return cur.rowcount

    def claim_next(self, annotator_id: str, stage: str) -> dict | None:
        """Atomically claim the oldest open task this annotator has not touched."""
        if stage not in STAGES:
            raise ServiceError(f"unknown stage {stage!r}")
        if not self._permitted(annotator_id, stage):
            raise ServiceError(f"annotator {annotator_id!r} not permitted for {stage}", 403)
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                row = self._conn.execute(
                    """
                    SELECT t.* FROM tasks t
                    WHERE t.stage = ?
                      AND (SELECT COUNT(*) FROM claims c
                           WHERE c.task_id = t.task_id AND c.released = 0)
                          < t.required_annotations
                      AND NOT EXISTS (SELECT 1 FROM claims c
                                      WHERE c.task_id = t.task_id
                                        AND c.annotator_id = ? AND c.released = 0)
                      AND NOT EXISTS (SELECT 1 FROM submissions s
                                      WHERE s.task_id = t.task_id AND s.annotator_id = ?)
                    ORDER BY t.created_seq
                    LIMIT 1
                    """,
                    (stage, annotator_id, annotator_id),
                ).fetchone()
                if row is None:
                    self._conn.commit()
                    return None
                self._conn.execute(
                    "INSERT INTO claims (task_id, annotator_id, claimed_at) VALUES (?, ?, ?)",
                    (row["task_id"], annotator_id, time.time()),
                )
                self._conn.commit()
            except Exception:
                self._conn.rollback()
                raise
            return self._task_dict(row)

    def _task_dict(self, row: sqlite3.Row) -> dict:
        submissions = self._conn.execute(
            "SELECT annotator_id FROM submissions WHERE task_id = ?", (row["task_id"],)
        ).fetchall()
        claims = self._conn.execute(
            "SELECT annotator_id, claimed_at FROM claims WHERE task_id = ? AND released = 0",
            (row["task_id"],),
        ).fetchall()
        n_sub = len(submissions)
        if n_sub >= row["required_annotations"]:
            status = "submitted"
        elif claims:
            status = "claimed"
        else:
            status = "open"
        return {
            "task_id": row["task_id"],
            "stage": row["stage"],
            "payload": json.loads(row["payload"]),
            "expected_labels": row["expected_labels"],
            "required_annotations": row["required_annotations"],
            "status": status,
            "claims": [
                {"annotator_id": c["annotator_id"], "claimed_at": c["claimed_at"]} for c in claims
            ],
            "submitted_by": sorted(s["annotator_id"] for s in submissions),
        }

    def get_task(self, task_id: str) -> dict:
        row = self._conn.execute("SELECT * FROM tasks WHERE task_id = ?", (task_id,)).fetchone()
        if row is None:
            raise ServiceError(f"unknown task {task_id!r}", 404)
        return self._task_dict(row)

    # -- submissions --------------------------------------------------------------

    def submit_labels(
        self, task_id: str, annotator_id: str, labels: list[dict], role: str = "primary"
    ) -> dict:
        row = self._conn.execute("SELECT * FROM tasks WHERE task_id = ?", (task_id,)).fetchone()
        if row is None:
            raise ServiceError(f"unknown task {task_id!r}", 404)
        stage = row["stage"]
        payload = json.loads(row["payload"])
        claim = self._conn.execute(
            "SELECT 1 FROM claims WHERE task_id = ? AND annotator_id = ? AND released = 0",
            (task_id, annotator_id),
        ).fetchone()
        if claim is None and role == "primary":
            raise ServiceError(f"task {task_id} not claimed by {annotator_id}", 409)
        prior = self._conn.execute(
            "SELECT 1 FROM submissions WHERE task_id = ? AND annotator_id = ?",
            (task_id, annotator_id),
        ).fetchone()
        if prior is not None:
            raise ServiceError(f"{annotator_id} already submitted for task {task_id}", 409)
        self._validate_labels(stage, payload, labels)
        submission_id = uuid.uuid4().hex
        with self._lock:
            self._conn.execute(
                "INSERT INTO submissions VALUES (?, ?, ?, ?, ?, ?)",
                (submission_id, task_id, annotator_id, role,
                 json.dumps(labels, sort_keys=True), time.time()),
            )
            self._conn.commit()
        task = self.get_task(task_id)
        return {
            "submission_id": submission_id,
            "task_id": task_id,
            "annotator_id": annotator_id,
            "status": task["status"],
            "agreement_pair_complete": len(task["submitted_by"]) >= 2,
        }

    def _validate_labels(self, stage: str, payload: dict, labels: list[dict]) -> None:
        expected_keys = self._expected_keys(stage, payload)
        got_keys = []
        for label in labels:
            if stage in ("relevance", "completeness"):
                if label.get("level") not in SUPPORT_LEVELS:
                    raise ServiceError(f"invalid support level {label.get('level')!r}")
            elif stage == "factuality":
                if not isinstance(label.get("verdict"), bool):
                    raise ServiceError("factuality verdict must be a boolean")
            elif stage == "selection":
                if not isinstance(label.get("matched_passage_ids"), list):
                    raise ServiceError("selection label needs matched_passage_ids (may be empty)")
                valid = {p["passage_id"] for p in payload["passages"]}
                for pid in label["matched_passage_ids"]:
                    if pid not in valid:
                        raise ServiceError(f"matched passage {pid!r} not in task payload")
            got_keys.append(self._label_key(stage, label))
        missing = sorted(set(expected_keys) - set(got_keys))
        extra = sorted(set(got_keys) - set(expected_keys))
        if missing or extra:
            raise ServiceError(
                f"label set mismatch: {len(labels)} of {len(expected_keys)}; "
                f"missing={missing[:5]} extra={extra[:5]}"
            )

    @staticmethod
    def _label_key(stage: str, label: dict) -> tuple:
        if stage == "relevance":
            return (label.get("passage_id"), label.get("statement_id"))
        if stage == "selection":
            return (label.get("ref_ordinal"),)
        return (label.get("statement_id"),)

    @staticmethod
    def _expected_keys(stage: str, payload: dict) -> list[tuple]:
        if stage == "relevance":
            return [
                (p["passage_id"], s["statement_id"])
                for p in payload["passages"]
                for s in payload["must_have_statements"]
            ]
        if stage == "selection":
            return [(r["ref_ordinal"],) for r in payload["references"]]
        key = "statements" if stage == "factuality" else "must_have_statements"
        return [(s["statement_id"],) for s in payload[key]]

    # -- export / progress / agreement ----------------------------------------------

    def export_labels(self, stage: str, query_id: str | None = None) -> list[dict]:
        """Flat label records in deterministic (task_id, annotator_id) order."""
        if stage not in STAGES:
            raise ServiceError(f"unknown stage {stage!r}")
        rows = self._conn.execute(
            """
            SELECT s.task_id, s.annotator_id, s.labels, s.role, t.payload
            FROM submissions s JOIN tasks t ON t.task_id = s.task_id
            WHERE t.stage = ?
            ORDER BY s.task_id, s.annotator_id
            """,
            (stage,),
        ).fetchall()
        records = []
        for row in rows:
            payload = json.loads(row["payload"])
            if query_id and payload.get("query_id") != query_id:
                continue
            base = {
                "task_id": row["task_id"],
                "annotator_id": row["annotator_id"],
                "role": row["role"],
                "query_id": payload.get("query_id"),
                "model_id": payload.get("model_id"),
            }
            for label in json.loads(row["labels"]):
                records.append({**base, **label})
        return records

    def progress(self) -> dict:
        out = {}
        for stage in STAGES:
            rows = self._conn.execute(
                "SELECT task_id FROM tasks WHERE stage = ?", (stage,)
            ).fetchall()
            counts = {"open": 0, "claimed": 0, "submitted": 0, "total": len(rows)}
            for row in rows:
                counts[self.get_task(row["task_id"])["status"]] += 1
            out[stage] = counts
        return out

    def agreement(self, stage: str, bootstrap: int = 0, seed: int = 0) -> dict:
        """Live Krippendorff's alpha over completed double-annotation pairs.

        For relevance and completeness, full and partial are merged into one
        support category to match how the agreement subsets are scored.
        """
        records = self.export_labels(stage)
        items: dict[tuple, list] = {}
        for rec in records:
            key = (rec["task_id"],) + self._label_key(stage, rec)
            if stage in ("relevance", "completeness"):
                value = "support" if rec["level"] in ("full", "partial") else "none"
            elif stage == "factuality":
                value = bool(rec["verdict"])
            else:
                value = ",".join(sorted(rec.get("matched_passage_ids", [])))
            items.setdefault(key, []).append(value)
        pairs = [labels for labels in items.values() if len(labels) >= 2]
        if not pairs:
            return {"stage": stage, "alpha": None, "n_items": 0}
        result = krippendorff_alpha(pairs, bootstrap=bootstrap, seed=seed)
        return {
            "stage": stage,
            "alpha": result.alpha,
            "n_items": result.n_items,
            "ci_low": result.ci_low,
            "ci_high": result.ci_high,
        }


def create_app(store: AnnotationStore):
    """FastAPI app over an AnnotationStore; per-annotator bearer-token auth."""
    from fastapi import Depends, FastAPI, Header, HTTPException, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="ragprobe annotation service")

    def current_annotator(authorization: str = Header(default="")) -> dict:
        if not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        annotator = store.annotator_by_token(authorization.removeprefix("Bearer ").strip())
        if annotator is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return annotator

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"detail": str(exc)})

    @app.get("/api/tasks/next")
    def next_task(stage: str, annotator: dict = Depends(current_annotator)):
        task = store.claim_next(annotator["annotator_id"], stage)
        return {"task": task}

    @app.get("/api/tasks/{task_id}")
    def get_task(task_id: str, annotator: dict = Depends(current_annotator)):
        return store.get_task(task_id)

    @app.post("/api/tasks/{task_id}/labels")
    def submit(task_id: str, body: dict, annotator: dict = Depends(current_annotator)):
        labels = body.get("labels")
        if not isinstance(labels, list):
            raise ServiceError("body must contain a labels list")
        return store.submit_labels(
            task_id, annotator["annotator_id"], labels, role=body.get("role", "primary")
        )

    @app.get("/api/export")
    def export(stage: str, annotator: dict = Depends(current_annotator)):
        return {"stage": stage, "labels": store.export_labels(stage)}

    @app.get("/api/progress")
    def progress(annotator: dict = Depends(current_annotator)):
        return store.progress()

    @app.get("/api/agreement")
    def agreement(stage: str, annotator: dict = Depends(current_annotator)):
        return store.agreement(stage)

    return app
