// Job polling: the service offers no streaming, so clients poll
// GET /jobs/{id} until a terminal state.

import type { JobStatus } from "./types.js";

export class JobFailed extends Error {
  constructor(public readonly job: JobStatus) {
    super(job.error ?? `job ${job.job_id} failed`);
    this.name = "JobFailed";
  }
}

export type PollOptions = {
  intervalMs?: number;
  maxAttempts?: number;
  sleep?: (ms: number) => Promise<void>;
  onProgress?: (job: JobStatus) => void;
};

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export async function pollJob(
  getJob: (jobId: string) => Promise<JobStatus>,
  jobId: string,
  options: PollOptions = {},
): Promise<JobStatus> {
  const intervalMs = options.intervalMs ?? 1000;
  const maxAttempts = options.maxAttempts ?? 600;
  const sleep = options.sleep ?? defaultSleep;
  for (let attempt = 0; attempt < maxAttempts; attempt += 1) {
    const job = await getJob(jobId);
    options.onProgress?.(job);
    if (job.state === "done") return job;
    if (job.state === "failed") throw new JobFailed(job);
    await sleep(intervalMs);
  }
  throw new Error(`job ${jobId} did not finish within ${maxAttempts} polls`);
}
