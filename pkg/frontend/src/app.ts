// Browser glue: mounts the pure views, wires DOM events to state
// transitions and API calls. All interesting behavior lives in state.ts,
// render.ts and polling.ts, which the tests cover.

import { ApiClient } from "./api.js";
import { JobFailed, pollJob } from "./polling.js";
import { renderApp } from "./render.js";
import type { BoardState } from "./state.js";
import {
  applyStylePreset,
  buildEditRequest,
  canRefine,
  canSubmit,
  canUndo,
  chooseInstance,
  errorRaised,
  initialState,
  jobFinished,
  jobStarted,
  masksPreviewed,
  projectLoaded,
  planUpdated,
  referenceUploaded,
  setConcept,
  setEditPrompt,
  setMaskSource,
  togglePage,
} from "./state.js";
import type { MaskSource } from "./types.js";

export class App {
  state: BoardState = initialState();
  feedbackDraft = "";

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {}

  async open(projectId: string): Promise<void> {
    this.state = projectLoaded(this.state, await this.api.getProject(projectId));
    this.mount();
  }

  mount(): void {
    this.root.innerHTML = renderApp(
      this.state,
      (hash) => this.api.frameUrl(hash),
      this.feedbackDraft,
    );
    this.wire();
  }

  private update(state: BoardState): void {
    this.state = state;
    this.mount();
  }

  private wire(): void {
    this.root.querySelectorAll<HTMLElement>(".frame-card").forEach((card) => {
      card.addEventListener("click", () => {
        this.update(togglePage(this.state, Number(card.dataset.page)));
      });
    });
    this.root.querySelectorAll<HTMLElement>(".instance-option").forEach((button) => {
      button.addEventListener("click", (event) => {
        event.stopPropagation();
        this.update(
          chooseInstance(
            this.state,
            Number(button.dataset.page),
            Number(button.dataset.instanceId),
          ),
        );
      });
    });
    this.root.querySelectorAll<HTMLElement>(".style-preset").forEach((button) => {
      button.addEventListener("click", () => {
        this.update(applyStylePreset(this.state, button.dataset.preset ?? ""));
      });
    });
    const concept = this.root.querySelector<HTMLInputElement>(".concept-input");
    concept?.addEventListener("change", () => {
      this.update(setConcept(this.state, concept.value));
      void this.refreshMaskPreview();
    });
    const prompt = this.root.querySelector<HTMLInputElement>(".prompt-input");
    prompt?.addEventListener("change", () => {
      this.update(setEditPrompt(this.state, prompt.value));
    });
    const maskSource = this.root.querySelector<HTMLSelectElement>(".mask-source");
    maskSource?.addEventListener("change", () => {
      this.update(setMaskSource(this.state, maskSource.value as MaskSource));
    });
    const feedback = this.root.querySelector<HTMLTextAreaElement>(".feedback-input");
    feedback?.addEventListener("input", () => {
      this.feedbackDraft = feedback.value;
      const refine = this.root.querySelector<HTMLButtonElement>(".submit-refine");
      if (refine) refine.disabled = !canRefine(this.state, this.feedbackDraft);
    });
    this.root
      .querySelector(".submit-edit")
      ?.addEventListener("click", () => void this.submitEdit());
    this.root
      .querySelector(".submit-refine")
      ?.addEventListener("click", () => void this.submitRefine());
    this.root
      .querySelector(".undo-button")
      ?.addEventListener("click", () => void this.undo());
  }

  async refreshMaskPreview(): Promise<void> {
    if (!this.state.projectId || !this.state.concept.trim()) return;
    try {
      const preview = await this.api.previewMasks(
        this.state.projectId,
        this.state.concept,
        this.state.maskSource,
      );
      this.update(masksPreviewed(this.state, preview.frames));
    } catch (error) {
      this.update(errorRaised(this.state, String(error)));
    }
  }

  async uploadReference(file: Blob): Promise<void> {
    if (!this.state.projectId) return;
    const { reference } = await this.api.uploadReference(this.state.projectId, file);
    const previewUrl = URL.createObjectURL(file);
    this.update(referenceUploaded(this.state, reference, previewUrl));
  }

  async submitEdit(): Promise<void> {
    if (!canSubmit(this.state) || !this.state.projectId) return;
    const projectId = this.state.projectId;
    try {
      const job = await this.api.submitEdit(projectId, buildEditRequest(this.state));
      this.update(jobStarted(this.state, job.job_id));
      await pollJob((id) => this.api.getJob(id), job.job_id, { intervalMs: 1000 });
      this.update(
        projectLoaded(jobFinished(this.state), await this.api.getProject(projectId)),
      );
    } catch (error) {
      // failed jobs surface as a toast; the board is left untouched
      const message = error instanceof JobFailed ? error.message : String(error);
      this.update(errorRaised(this.state, message));
    }
  }

  async submitRefine(): Promise<void> {
    if (!canRefine(this.state, this.feedbackDraft) || !this.state.projectId) return;
    try {
      const { plan } = await this.api.refinePlan(this.state.projectId, this.feedbackDraft);
      this.feedbackDraft = "";
      this.update(planUpdated(this.state, plan));
    } catch (error) {
      this.update(errorRaised(this.state, String(error)));
    }
  }

  async undo(): Promise<void> {
    if (!canUndo(this.state) || !this.state.projectId) return;
    try {
      this.update(projectLoaded(this.state, await this.api.undo(this.state.projectId)));
    } catch (error) {
      this.update(errorRaised(this.state, String(error)));
    }
  }
}

export function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "";
  const projectId = params.get("project");
  const app = new App(root, new ApiClient(base));
  if (projectId) void app.open(projectId);
}
