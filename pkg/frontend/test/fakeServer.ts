/** Scripted in-memory stand-in for the annotation service REST API.
 *
 * Implements just enough of the claim/submit contract for client tests:
 * oldest-open-first claims, one submission per annotator per task, 409 on
 * resubmission, and bearer-token auth.
 */

import type { FetchLike } from "../src/api.js";
import type { Label, Stage, Task } from "../src/types.js";

interface StoredTask extends Task {
  submissions: Map<string, Label[]>;
}

export class FakeServer {
  private tasks: StoredTask[] = [];
  private tokens = new Map<string, string>(); // token -> annotator_id
  /** when true, every request rejects as if the network dropped */
  offline = false;
  requests: string[] = [];

  addAnnotator(annotatorId: string, token: string): void {
    this.tokens.set(token, annotatorId);
  }

  addTask(task: Task): void {
    this.tasks.push({ ...task, submissions: new Map() });
  }

  submissionsFor(taskId: string): Map<string, Label[]> {
    const task = this.tasks.find((t) => t.task_id === taskId);
    if (task === undefined) throw new Error(`no such task: ${taskId}`);
    return task.submissions;
  }

  fetch: FetchLike = async (url, init) => {
    this.requests.push(`${init?.method ?? "GET"} ${url}`);
    if (this.offline) throw new TypeError("fetch failed");

    const headers = (init?.headers ?? {}) as Record<string, string>;
    const auth = headers["Authorization"] ?? "";
    const annotatorId = this.tokens.get(auth.replace("Bearer ", ""));
    if (annotatorId === undefined) {
      return jsonResponse(401, { detail: "unknown token" });
    }

    const { pathname, searchParams } = new URL(url, "http://fake");
    if (pathname === "/api/tasks/next") {
      const stage = searchParams.get("stage") as Stage;
      const open = this.tasks.find(
        (t) =>
          t.stage === stage &&
          t.submissions.size < t.required_annotations &&
          !t.submissions.has(annotatorId),
      );
      return jsonResponse(200, { task: open === undefined ? null : publicView(open) });
    }

    const submitMatch = pathname.match(/^\/api\/tasks\/([^/]+)\/labels$/);
    if (submitMatch !== null && init?.method === "POST") {
      const task = this.tasks.find((t) => t.task_id === submitMatch[1]);
      if (task === undefined) return jsonResponse(404, { detail: "unknown task" });
      if (task.submissions.has(annotatorId)) {
        return jsonResponse(409, { detail: "already submitted" });
      }
      const body = JSON.parse(String(init.body)) as { labels: Label[] };
      if (body.labels.length !== task.expected_labels) {
        return jsonResponse(422, {
          detail: `expected ${task.expected_labels} labels, got ${body.labels.length}`,
        });
      }
      task.submissions.set(annotatorId, body.labels);
      return jsonResponse(200, {
        submission_id: `sub-${task.task_id}-${annotatorId}`,
        task_id: task.task_id,
        annotator_id: annotatorId,
        status: "accepted",
        agreement_pair_complete: task.submissions.size >= task.required_annotations,
      });
    }

    const getMatch = pathname.match(/^\/api\/tasks\/([^/]+)$/);
    if (getMatch !== null) {
      const task = this.tasks.find((t) => t.task_id === getMatch[1]);
      if (task === undefined) return jsonResponse(404, { detail: "unknown task" });
      return jsonResponse(200, publicView(task));
    }

    return jsonResponse(404, { detail: `no route: ${pathname}` });
  };
}

function publicView(task: StoredTask): Task {
  const { submissions, ...rest } = task;
  return {
    ...rest,
    status: submissions.size >= task.required_annotations ? "submitted" : "open",
  };
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function relevanceTask(taskId: string, nPassages: number, nStatements: number): Task {
  return {
    task_id: taskId,
    stage: "relevance",
    payload: {
      query_id: `q-${taskId}`,
      question: "What is the first-line treatment?",
      passages: Array.from({ length: nPassages }, (_, i) => ({
        passage_id: `p${i}`,
        text: `passage text ${i}`,
        title: `Passage ${i}`,
      })),
      must_have_statements: Array.from({ length: nStatements }, (_, i) => ({
        statement_id: `s${i}`,
        text: `must-have statement ${i}`,
      })),
    },
    expected_labels: nPassages * nStatements,
    required_annotations: 1,
    status: "open",
  };
}

export function factualityTask(taskId: string, nStatements: number): Task {
  return {
    task_id: taskId,
    stage: "factuality",
    payload: {
      query_id: `q-${taskId}`,
      model_id: "model-a",
      response_text: "response body",
      statements: Array.from({ length: nStatements }, (_, i) => ({
        statement_id: `s${i}`,
        text: `statement ${i}`,
      })),
    },
    expected_labels: nStatements,
    required_annotations: 1,
    status: "open",
  };
}

export function selectionTask(taskId: string, nRefs: number, nPassages: number): Task {
  return {
    task_id: taskId,
    stage: "selection",
    payload: {
      query_id: `q-${taskId}`,
      model_id: "model-a",
      passages: Array.from({ length: nPassages }, (_, i) => ({
        passage_id: `p${i}`,
        text: `passage text ${i}`,
        title: `Passage ${i}`,
      })),
      references: Array.from({ length: nRefs }, (_, i) => ({
        ref_ordinal: i + 1,
        raw_text: `Reference line ${i + 1}`,
      })),
    },
    expected_labels: nRefs,
    required_annotations: 1,
    status: "open",
  };
}
