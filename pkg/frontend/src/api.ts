/** Thin typed client over the annotation service REST API.
 *
 * All state lives on the server; this client only moves records. The fetch
 * implementation is injectable so tests can script the server.
 */

import type {
  AgreementReadout,
  Label,
  Stage,
  StageProgress,
  SubmitReceipt,
  Task,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Server answered with a non-2xx status. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      ...init,
      headers: {
        Authorization: `Bearer ${this.token}`,
        "Content-Type": "application/json",
        ...(init.headers ?? {}),
      },
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  /** Claim the next open task for a stage; null when the queue is empty. */
  async claimNext(stage: Stage): Promise<Task | null> {
    const out = await this.request<{ task: Task | null }>(
      `/api/tasks/next?stage=${encodeURIComponent(stage)}`,
    );
    return out.task;
  }

  async getTask(taskId: string): Promise<Task> {
    return this.request<Task>(`/api/tasks/${encodeURIComponent(taskId)}`);
  }

  async submitLabels(taskId: string, labels: Label[]): Promise<SubmitReceipt> {
    return this.request<SubmitReceipt>(
      `/api/tasks/${encodeURIComponent(taskId)}/labels`,
      { method: "POST", body: JSON.stringify({ labels }) },
    );
  }

  async progress(): Promise<Record<Stage, StageProgress>> {
    return this.request<Record<Stage, StageProgress>>("/api/progress");
  }

  async agreement(stage: Stage): Promise<AgreementReadout> {
    return this.request<AgreementReadout>(
      `/api/agreement?stage=${encodeURIComponent(stage)}`,
    );
  }
}
