// Wire types for the plotnpolish HTTP API. The edit request shape is
// pinned by contracts/edit_request.golden.json at the repository root.

export type PlanCharacter = {
  Name: string;
  Description: string;
  Category: string;
};

export type PlanPage = {
  Page: number;
  Text: string;
  Image_Prompt: string;
  Location_Description: string;
};

export type Plan = {
  "Main Characters": PlanCharacter[];
  Story: PlanPage[];
  [key: string]: unknown;
};

export type FrameInfo = {
  index: number;
  hash: string;
  provenance: "template" | "edited" | "imported";
};

export type EditKind = "local" | "global_style" | "personalized" | "consistency_pass";
export type MaskSource = "segmentation" | "attention" | "user_supplied";

export type EditRequestWire = {
  wire_version: 1;
  kind: EditKind;
  concept: string;
  edit_prompt: string;
  mask_source: MaskSource;
  strength_override: number | null;
  pages: number[] | null;
  instance_overrides: Record<string, number>;
  reference: string | null;
  user_masks: string[] | null;
};

export type TurnRecord = {
  request: EditRequestWire;
  seed: number;
  strength: number;
  before: string[];
  after: string[];
  warnings: string[];
  timestamp: string;
};

export type ProjectInfo = {
  project_id: string;
  seed: number;
  plan: Plan | null;
  frames: FrameInfo[];
  turns: TurnRecord[];
  config: unknown;
};

export type JobState = "queued" | "running" | "done" | "failed";

export type JobStatus = {
  job_id: string;
  project_id: string;
  kind: string;
  state: JobState;
  progress: { done: number; total: number };
  error: string | null;
  result: { frames: string[] } | null;
};

export type MaskInstance = {
  instance_id: number;
  confidence: number;
  mask: string;
  selected: boolean;
};

export type MaskPreviewFrame = {
  index: number;
  instances: MaskInstance[];
  warning: string | null;
};
