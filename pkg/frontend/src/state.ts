// Board state and its pure transitions.
//
// The UI never owns server truth: everything except in-flight form data is
// a projection of the last ProjectInfo response, so reloading the project
// reconstructs the board identically.

import type {
  EditKind,
  EditRequestWire,
  FrameInfo,
  MaskPreviewFrame,
  MaskSource,
  Plan,
  ProjectInfo,
  TurnRecord,
} from "./types.js";

export type BoardState = {
  projectId: string | null;
  plan: Plan | null;
  frames: FrameInfo[];
  turns: TurnRecord[];
  // in-flight form data
  selectedPages: number[]; // 1-based page numbers; empty = all frames
  kind: EditKind;
  concept: string;
  editPrompt: string;
  maskSource: MaskSource;
  strengthOverride: number | null;
  instanceOverrides: Record<string, number>;
  reference: string | null;
  referencePreviewUrl: string | null;
  maskPreview: MaskPreviewFrame[] | null;
  // transient status
  jobInFlight: string | null;
  error: string | null;
};

export const STYLE_PRESETS = [
  "Van Gogh style",
  "Day of the Dead style",
  "watercolor painting style",
  "comic book style",
] as const;

export function initialState(): BoardState {
  return {
    projectId: null,
    plan: null,
    frames: [],
    turns: [],
    selectedPages: [],
    kind: "local",
    concept: "",
    editPrompt: "",
    maskSource: "segmentation",
    strengthOverride: null,
    instanceOverrides: {},
    reference: null,
    referencePreviewUrl: null,
    maskPreview: null,
    jobInFlight: null,
    error: null,
  };
}

/** Project the server's view of a project onto the board. */
export function projectLoaded(state: BoardState, info: ProjectInfo): BoardState {
  return {
    ...state,
    projectId: info.project_id,
    plan: info.plan,
    frames: info.frames,
    turns: info.turns,
    // stale per-edit data never outlives a reload
    instanceOverrides: {},
    maskPreview: null,
    error: null,
  };
}

export function planUpdated(state: BoardState, plan: Plan): BoardState {
  return { ...state, plan };
}

export function togglePage(state: BoardState, page: number): BoardState {
  const selected = state.selectedPages.includes(page)
    ? state.selectedPages.filter((p) => p !== page)
    : [...state.selectedPages, page].sort((a, b) => a - b);
  return { ...state, selectedPages: selected };
}

export function setConcept(state: BoardState, concept: string): BoardState {
  // a new concept invalidates any previewed masks and instance picks
  return { ...state, concept, maskPreview: null, instanceOverrides: {} };
}

export function setEditPrompt(state: BoardState, editPrompt: string): BoardState {
  return { ...state, editPrompt };
}

export function setKind(state: BoardState, kind: EditKind): BoardState {
  return kind === "global_style"
    ? { ...state, kind, concept: "", maskPreview: null, instanceOverrides: {} }
    : { ...state, kind };
}

export function setMaskSource(state: BoardState, maskSource: MaskSource): BoardState {
  return { ...state, maskSource, maskPreview: null, instanceOverrides: {} };
}

export function applyStylePreset(state: BoardState, preset: string): BoardState {
  return { ...setKind(state, "global_style"), editPrompt: preset };
}

export function masksPreviewed(
  state: BoardState,
  frames: MaskPreviewFrame[],
): BoardState {
  return { ...state, maskPreview: frames };
}

/** Record the user's disambiguation pick for one page. */
export function chooseInstance(
  state: BoardState,
  page: number,
  instanceId: number,
): BoardState {
  return {
    ...state,
    instanceOverrides: { ...state.instanceOverrides, [String(page)]: instanceId },
  };
}

export function referenceUploaded(
  state: BoardState,
  reference: string,
  previewUrl: string | null,
): BoardState {
  return { ...state, reference, referencePreviewUrl: previewUrl, kind: "personalized" };
}

export function jobStarted(state: BoardState, jobId: string): BoardState {
  return { ...state, jobInFlight: jobId, error: null };
}

export function jobFinished(state: BoardState): BoardState {
  return { ...state, jobInFlight: null };
}

export function errorRaised(state: BoardState, message: string): BoardState {
  return { ...state, jobInFlight: null, error: message };
}

/** The wire-schema edit request for the current form data. */
export function buildEditRequest(state: BoardState): EditRequestWire {
  return {
    wire_version: 1,
    kind: state.kind,
    concept: state.kind === "global_style" ? "" : state.concept,
    edit_prompt: state.editPrompt,
    mask_source: state.maskSource,
    strength_override: state.strengthOverride,
    pages: state.selectedPages.length ? [...state.selectedPages] : null,
    instance_overrides: { ...state.instanceOverrides },
    reference: state.kind === "personalized" ? state.reference : null,
    user_masks: null,
  };
}

/** One mutating request at a time, and the form must be complete. */
export function canSubmit(state: BoardState): boolean {
  if (state.jobInFlight !== null || state.frames.length === 0) return false;
  switch (state.kind) {
    case "local":
      return state.concept.trim() !== "" && state.editPrompt.trim() !== "";
    case "personalized":
      return (
        state.concept.trim() !== "" &&
        state.editPrompt.trim() !== "" &&
        state.reference !== null
      );
    case "global_style":
      return state.editPrompt.trim() !== "";
    case "consistency_pass":
      return state.plan !== null || state.concept.trim() !== "";
  }
}

export function canRefine(state: BoardState, feedback: string): boolean {
  return state.jobInFlight === null && state.plan !== null && feedback.trim() !== "";
}

export function canUndo(state: BoardState): boolean {
  return state.jobInFlight === null && state.turns.length > 0;
}

/** Index of the turn an undo would revert, or -1. */
export function undoPointer(state: BoardState): number {
  return state.turns.length - 1;
}

/** Concepts offered in the concept picker: declared character categories. */
export function conceptChoices(state: BoardState): string[] {
  if (!state.plan) return [];
  return state.plan["Main Characters"].map((c) => c.Category);
}
