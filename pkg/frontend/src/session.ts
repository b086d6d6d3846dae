/** Orchestrates claim -> label -> submit for one annotator and stage.
 *
 * Drafts persist per task and survive reloads; they are cleared only when the
 * server accepts a submission. A 409 (already submitted) or a network failure
 * surfaces as a banner and leaves the draft untouched.
 */

import { ApiClient, ApiError } from "./api.js";
import { DraftStore } from "./drafts.js";
import type { Label, Stage, Task } from "./types.js";
import { StageView, assembleLabels, buildStageView, isComplete } from "./viewmodel.js";

export type SessionStatus = "idle" | "labeling" | "empty" | "error";

export interface SessionState {
  status: SessionStatus;
  view: StageView | null;
  values: Map<string, Label>;
  banner: string | null;
}

export class Session {
  private api: ApiClient;
  private drafts: DraftStore;
  readonly stage: Stage;
  state: SessionState = { status: "idle", view: null, values: new Map(), banner: null };

  constructor(api: ApiClient, drafts: DraftStore, stage: Stage) {
    this.api = api;
    this.drafts = drafts;
    this.stage = stage;
  }

  /** Claim the next open task, restoring any saved draft for it. */
  async claimNext(): Promise<SessionState> {
    let task: Task | null;
    try {
      task = await this.api.claimNext(this.stage);
    } catch (err) {
      this.state = {
        status: "error",
        view: this.state.view,
        values: this.state.values,
        banner: describe(err),
      };
      return this.state;
    }
    if (task === null) {
      this.state = { status: "empty", view: null, values: new Map(), banner: null };
      return this.state;
    }
    const view = buildStageView(task);
    const values = this.drafts.load(task.task_id);
    // Multiselect controls start at an explicit empty selection: "matches no
    // passage" is a valid answer, not a missing one.
    for (const control of view.controls) {
      if (control.kind === "multiselect" && !values.has(control.key)) {
        values.set(control.key, { matched_passage_ids: [] });
      }
    }
    this.state = { status: "labeling", view, values, banner: null };
    return this.state;
  }

  /** Record one control's value and persist the draft. */
  setLabel(controlKey: string, value: Label): void {
    if (this.state.view === null) throw new Error("no task in progress");
    const known = this.state.view.controls.some((c) => c.key === controlKey);
    if (!known) throw new Error(`unknown control: ${controlKey}`);
    this.state.values.set(controlKey, value);
    this.drafts.save(this.state.view.task.task_id, this.state.values);
  }

  get complete(): boolean {
    return this.state.view !== null && isComplete(this.state.view, this.state.values);
  }

  /**
   * Submit the assembled labels. On acceptance the draft is cleared and the
   * next task claimed automatically; on any failure the draft is retained.
   */
  async submit(): Promise<SessionState> {
    const view = this.state.view;
    if (view === null) throw new Error("no task in progress");
    if (!this.complete) {
      this.state.banner = "all items must be labeled before submitting";
      return this.state;
    }
    const labels = assembleLabels(view, this.state.values);
    try {
      await this.api.submitLabels(view.task.task_id, labels);
    } catch (err) {
      this.state = { status: "error", view, values: this.state.values, banner: describe(err) };
      return this.state;
    }
    this.drafts.clear(view.task.task_id);
    return this.claimNext();
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 409 ? `already submitted: ${err.detail}` : err.detail;
  }
  if (err instanceof Error) return `network error: ${err.message}`;
  return String(err);
}
