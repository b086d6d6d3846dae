/** Shared types mirroring the annotation service's REST payloads. */

export type Stage = "relevance" | "selection" | "factuality" | "completeness";

export type SupportLevel = "full" | "partial" | "none";

export interface PassageCard {
  passage_id: string;
  text: string;
  title: string;
}

export interface StatementItem {
  statement_id: string;
  text: string;
}

export interface ReferenceItem {
  ref_ordinal: number;
  raw_text: string;
}

export interface TaskPayload {
  query_id: string;
  question?: string;
  model_id?: string;
  response_text?: string;
  passages?: PassageCard[];
  must_have_statements?: StatementItem[];
  statements?: StatementItem[];
  references?: ReferenceItem[];
}

export interface Task {
  task_id: string;
  stage: Stage;
  payload: TaskPayload;
  expected_labels: number;
  required_annotations: number;
  status: "open" | "claimed" | "submitted";
}

/** One label record, shape depending on the stage. */
export interface Label {
  passage_id?: string;
  statement_id?: string;
  ref_ordinal?: number;
  level?: SupportLevel;
  verdict?: boolean;
  matched_passage_ids?: string[];
}

export interface SubmitReceipt {
  submission_id: string;
  task_id: string;
  annotator_id: string;
  status: string;
  agreement_pair_complete: boolean;
}

export interface StageProgress {
  open: number;
  claimed: number;
  submitted: number;
  total: number;
}

export interface AgreementReadout {
  stage: Stage;
  alpha: number | null;
  n_items: number;
}
