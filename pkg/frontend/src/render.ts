// Pure view functions: BoardState in, HTML strings out. The browser glue
// in app.ts only mounts these and wires events, so every visual state is
// testable as a string.

import type { BoardState } from "./state.js";
import {
  STYLE_PRESETS,
  canRefine,
  canSubmit,
  canUndo,
  conceptChoices,
} from "./state.js";
import type { MaskPreviewFrame, Plan, TurnRecord } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function renderPlanCards(plan: Plan | null): string {
  if (!plan) return `<p class="empty-plan">No plan yet.</p>`;
  const characters = plan["Main Characters"]
    .map(
      (c) =>
        `<li class="character-chip" data-category="${escapeHtml(c.Category)}">` +
        `<strong>${escapeHtml(c.Name)}</strong> (${escapeHtml(c.Category)}): ` +
        `${escapeHtml(c.Description)}</li>`,
    )
    .join("");
  const cards = plan.Story.map(
    (page) =>
      `<article class="plan-card" data-page="${page.Page}">` +
      `<h3>Page ${page.Page}</h3>` +
      `<p class="plan-text">${escapeHtml(page.Text)}</p>` +
      `<p class="plan-prompt">${escapeHtml(page.Image_Prompt)}</p>` +
      `<p class="plan-location">${escapeHtml(page.Location_Description)}</p>` +
      `</article>`,
  ).join("");
  return `<ul class="character-list">${characters}</ul><div class="plan-cards">${cards}</div>`;
}

export function renderBoard(state: BoardState, frameUrl: (hash: string) => string): string {
  if (state.frames.length === 0) {
    return `<p class="empty-board">No frames yet. Visualize the plan or import images.</p>`;
  }
  const cells = state.frames
    .map((frame) => {
      const page = frame.index + 1;
      const selected = state.selectedPages.includes(page) ? " selected" : "";
      const caption =
        state.plan && state.plan.Story[frame.index]
          ? state.plan.Story[frame.index].Text
          : `frame ${page}`;
      const overlay = overlayFor(state, page, frameUrl);
      return (
        `<figure class="frame-card${selected}" data-page="${page}">` +
        `<div class="frame-stack">` +
        `<img class="frame-image" src="${frameUrl(frame.hash)}" alt="page ${page}">` +
        overlay +
        `</div>` +
        `<figcaption><span class="provenance">${frame.provenance}</span> ${escapeHtml(caption)}</figcaption>` +
        `</figure>`
      );
    })
    .join("");
  return `<div class="board">${cells}</div>`;
}

function overlayFor(
  state: BoardState,
  page: number,
  frameUrl: (hash: string) => string,
): string {
  if (!state.maskPreview) return "";
  const preview = state.maskPreview.find((f) => f.index === page - 1);
  if (!preview || preview.instances.length === 0) return "";
  const override = state.instanceOverrides[String(page)];
  const shown =
    override !== undefined
      ? preview.instances.find((i) => i.instance_id === override)
      : preview.instances.find((i) => i.selected);
  if (!shown) return "";
  // masks are 1-bit PNGs served by the backend; the client never computes them
  return `<img class="mask-overlay" style="opacity:0.4" src="${frameUrl(shown.mask)}" alt="mask">`;
}

export function renderInstancePicker(state: BoardState): string {
  if (!state.maskPreview) return "";
  const ambiguous = state.maskPreview.filter((f) => f.instances.length > 1);
  if (ambiguous.length === 0) return "";
  const sections = ambiguous.map((frame) => pickerSection(state, frame)).join("");
  return `<div class="instance-picker">${sections}</div>`;
}

function pickerSection(state: BoardState, frame: MaskPreviewFrame): string {
  const page = frame.index + 1;
  const chosen = state.instanceOverrides[String(page)];
  const buttons = frame.instances
    .map((instance) => {
      const active =
        chosen === instance.instance_id || (chosen === undefined && instance.selected)
          ? " active"
          : "";
      return (
        `<button class="instance-option${active}" data-page="${page}" ` +
        `data-instance-id="${instance.instance_id}">` +
        `instance ${instance.instance_id} (${instance.confidence.toFixed(2)})` +
        `</button>`
      );
    })
    .join("");
  return (
    `<section class="instance-frame" data-page="${page}">` +
    `<h4>Page ${page}: pick the subject</h4>${buttons}</section>`
  );
}

export function renderTimeline(state: BoardState): string {
  if (state.turns.length === 0) return `<p class="empty-timeline">No edits yet.</p>`;
  const rows = state.turns
    .map((turn, index) => timelineRow(turn, index))
    .join("");
  const undoDisabled = canUndo(state) ? "" : " disabled";
  return (
    `<ol class="timeline">${rows}</ol>` +
    `<button class="undo-button"${undoDisabled}>Undo last turn</button>`
  );
}

function timelineRow(turn: TurnRecord, index: number): string {
  const label =
    turn.request.kind + (turn.request.concept ? ` [${escapeHtml(turn.request.concept)}]` : "");
  const changed = turn.before.filter((h, i) => h !== turn.after[i]).length;
  const warnings = turn.warnings.length
    ? `<span class="turn-warnings">${escapeHtml(turn.warnings.join("; "))}</span>`
    : "";
  return (
    `<li class="turn" data-turn="${index}">` +
    `<span class="turn-label">${label}</span> ` +
    `<span class="turn-prompt">${escapeHtml(turn.request.edit_prompt)}</span> ` +
    `<span class="turn-changed">${changed} frame(s) changed</span>` +
    `${warnings}</li>`
  );
}

export function renderControls(state: BoardState, feedbackDraft = ""): string {
  const presets = STYLE_PRESETS.map(
    (preset) =>
      `<button class="style-preset" data-preset="${escapeHtml(preset)}">${escapeHtml(preset)}</button>`,
  ).join("");
  const concepts = conceptChoices(state)
    .map((c) => `<option value="${escapeHtml(c)}">${escapeHtml(c)}</option>`)
    .join("");
  const submitDisabled = canSubmit(state) ? "" : " disabled";
  const refineDisabled = canRefine(state, feedbackDraft) ? "" : " disabled";
  const busy = state.jobInFlight
    ? `<span class="job-indicator" data-job="${state.jobInFlight}">working…</span>`
    : "";
  const error = state.error
    ? `<div class="error-toast">${escapeHtml(state.error)}</div>`
    : "";
  const reference = state.referencePreviewUrl
    ? `<img class="reference-preview" src="${state.referencePreviewUrl}" alt="reference">`
    : "";
  return (
    `<div class="controls">` +
    `<datalist id="concepts">${concepts}</datalist>` +
    `<input class="concept-input" list="concepts" value="${escapeHtml(state.concept)}" placeholder="concept">` +
    `<input class="prompt-input" value="${escapeHtml(state.editPrompt)}" placeholder="edit prompt">` +
    `<select class="mask-source">` +
    ["segmentation", "attention", "user_supplied"]
      .map(
        (source) =>
          `<option value="${source}"${state.maskSource === source ? " selected" : ""}>${source}</option>`,
      )
      .join("") +
    `</select>` +
    `<div class="style-presets">${presets}</div>` +
    reference +
    `<button class="submit-edit"${submitDisabled}>Apply edit</button>` +
    `<textarea class="feedback-input" placeholder="plan feedback">${escapeHtml(feedbackDraft)}</textarea>` +
    `<button class="submit-refine"${refineDisabled}>Refine plan</button>` +
    busy +
    error +
    `</div>`
  );
}

export function renderApp(
  state: BoardState,
  frameUrl: (hash: string) => string,
  feedbackDraft = "",
): string {
  return (
    `<main class="plotnpolish">` +
    `<section class="plan-panel">${renderPlanCards(state.plan)}</section>` +
    `<section class="board-panel">${renderBoard(state, frameUrl)}</section>` +
    `<section class="picker-panel">${renderInstancePicker(state)}</section>` +
    `<section class="controls-panel">${renderControls(state, feedbackDraft)}</section>` +
    `<section class="timeline-panel">${renderTimeline(state)}</section>` +
    `</main>`
  );
}
