/** Pure stage view-models: one control per labelable unit, keyboard-first.
 *
 * Controls carry a stable key; the submitted label set is assembled from
 * exactly the controls the user has set — the UI never fabricates labels.
 */

import type { Label, SupportLevel, Task } from "./types.js";

export interface Control {
  /** stable identity for drafts and label assembly */
  key: string;
  kind: "support" | "boolean" | "multiselect";
  /** what this control labels, merged into the label record on submit */
  target: Partial<Label>;
  /** prompt text shown beside the control */
  heading: string;
  detail: string;
  /** multiselect only: selectable passage ids */
  choices?: string[];
}

export interface StageView {
  task: Task;
  controls: Control[];
  guideline: string;
}

export const GUIDELINES: Record<string, string> = {
  relevance:
    "For each passage x must-have statement cell: full = the passage alone supports " +
    "the statement; partial = it supports part of the statement; none = no support. " +
    "Keys 1/2/3 set full/partial/none and advance.",
  selection:
    "For each reference, select every retrieved passage it actually corresponds to " +
    "(check titles and metadata). Leave empty if the reference matches no passage.",
  factuality:
    "Mark each statement true if it is factually accurate as written, false otherwise. " +
    "Keys t/f set the verdict and advance.",
  completeness:
    "For each must-have statement: full = the response fully conveys it; partial = " +
    "partially; none = absent. Keys 1/2/3 set the level and advance.",
};

export function buildStageView(task: Task): StageView {
  const controls: Control[] = [];
  const payload = task.payload;
  switch (task.stage) {
    case "relevance":
      for (const passage of payload.passages ?? []) {
        for (const statement of payload.must_have_statements ?? []) {
          controls.push({
            key: `${passage.passage_id}|${statement.statement_id}`,
            kind: "support",
            target: {
              passage_id: passage.passage_id,
              statement_id: statement.statement_id,
            },
            heading: passage.title || passage.passage_id,
            detail: statement.text,
          });
        }
      }
      break;
    case "selection":
      for (const ref of payload.references ?? []) {
        controls.push({
          key: `ref|${ref.ref_ordinal}`,
          kind: "multiselect",
          target: { ref_ordinal: ref.ref_ordinal },
          heading: `[${ref.ref_ordinal}]`,
          detail: ref.raw_text,
          choices: (payload.passages ?? []).map((p) => p.passage_id),
        });
      }
      break;
    case "factuality":
      for (const statement of payload.statements ?? []) {
        controls.push({
          key: `stmt|${statement.statement_id}`,
          kind: "boolean",
          target: { statement_id: statement.statement_id },
          heading: statement.statement_id,
          detail: statement.text,
        });
      }
      break;
    case "completeness":
      for (const statement of payload.must_have_statements ?? []) {
        controls.push({
          key: `must|${statement.statement_id}`,
          kind: "support",
          target: { statement_id: statement.statement_id },
          heading: statement.statement_id,
          detail: statement.text,
        });
      }
      break;
  }
  return { task, controls, guideline: GUIDELINES[task.stage] };
}

const SUPPORT_KEYS: Record<string, SupportLevel> = {
  "1": "full",
  "2": "partial",
  "3": "none",
};

export interface KeyAction {
  value: Partial<Label>;
  advance: boolean;
}

/** Map a key press on the focused control to a label value, or null to ignore. */
export function keyToAction(control: Control, key: string): KeyAction | null {
  if (control.kind === "support" && key in SUPPORT_KEYS) {
    return { value: { level: SUPPORT_KEYS[key] }, advance: true };
  }
  if (control.kind === "boolean" && (key === "t" || key === "f")) {
    return { value: { verdict: key === "t" }, advance: true };
  }
  return null;
}

/** Toggle one passage inside a multiselect control's current selection. */
export function toggleSelection(current: string[] | undefined, passageId: string): string[] {
  const set = new Set(current ?? []);
  if (set.has(passageId)) set.delete(passageId);
  else set.add(passageId);
  return Array.from(set).sort();
}

/** Submission stays disabled until every control has a value. */
export function isComplete(view: StageView, values: Map<string, Label>): boolean {
  return view.controls.every((c) => values.has(c.key));
}

/** Assemble the POST body from exactly the user-set controls. */
export function assembleLabels(view: StageView, values: Map<string, Label>): Label[] {
  const labels: Label[] = [];
  for (const control of view.controls) {
    const value = values.get(control.key);
    if (value === undefined) continue;
    labels.push({ ...control.target, ...value });
  }
  return labels;
}
