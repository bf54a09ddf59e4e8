// Typed client for the plotnpolish service. The fetch implementation is
// injectable so tests run against an in-memory stub server.

import type {
  EditRequestWire,
  JobStatus,
  MaskPreviewFrame,
  Plan,
  ProjectInfo,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<never> {
  let detail = response.statusText || `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.requestJson<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createProject(plan: Plan, seed = 0): Promise<ProjectInfo> {
    return this.post("/projects", { plan, seed });
  }

  getProject(projectId: string): Promise<ProjectInfo> {
    return this.requestJson(`/projects/${projectId}`);
  }

  refinePlan(projectId: string, feedback: string): Promise<{ plan: Plan }> {
    return this.post(`/projects/${projectId}/plan/refine`, { feedback });
  }

  visualize(projectId: string, seed?: number): Promise<JobStatus> {
    return this.post(`/projects/${projectId}/visualize`, seed === undefined ? {} : { seed });
  }

  submitEdit(
    projectId: string,
    request: EditRequestWire,
    seed?: number,
  ): Promise<JobStatus> {
    const body = seed === undefined ? { request } : { request, seed };
    return this.post(`/projects/${projectId}/edits`, body);
  }

  previewMasks(
    projectId: string,
    concept: string,
    maskSource = "segmentation",
  ): Promise<{ frames: MaskPreviewFrame[] }> {
    return this.post(`/projects/${projectId}/masks/preview`, {
      concept,
      mask_source: maskSource,
    });
  }

  uploadReference(projectId: string, file: Blob, name = "reference.png"): Promise<{ reference: string }> {
    const form = new FormData();
    form.append("files", file, name);
    return this.requestJson(`/projects/${projectId}/references`, {
      method: "POST",
      body: form,
    });
  }

  undo(projectId: string): Promise<ProjectInfo> {
    return this.requestJson(`/projects/${projectId}/undo`, { method: "POST" });
  }

  getJob(jobId: string): Promise<JobStatus> {
    return this.requestJson(`/jobs/${jobId}`);
  }

  frameUrl(hash: string): string {
    return `${this.baseUrl}/frames/${hash}`;
  }
}
