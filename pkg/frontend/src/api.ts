// Thin typed client for the synthesis service, with polling.

import { JobView, MetaInfo, SynthesizeRequest } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function readError(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    detail = body.detail ?? JSON.stringify(body);
  } catch {
    // body was not JSON; keep the status text
  }
  throw new ApiError(resp.status, detail);
}

export class Client {
  constructor(readonly baseUrl: string) {}

  async meta(): Promise<MetaInfo> {
    const resp = await fetch(`${this.baseUrl}/meta`);
    if (!resp.ok) await readError(resp);
    return resp.json();
  }

  async synthesize(body: SynthesizeRequest): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/synthesize`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) await readError(resp);
    return (await resp.json()).job_id;
  }

  async job(id: string): Promise<JobView> {
    const resp = await fetch(`${this.baseUrl}/jobs/${id}`);
    if (!resp.ok) await readError(resp);
    return resp.json();
  }

  /**
   * Poll a job every `intervalMs` until done/failed; reports progress along
   * the way and retries transient network errors with backoff.
   */
  async waitForJob(
    id: string,
    onProgress?: (j: JobView) => void,
    intervalMs = 500,
    maxRetries = 5,
  ): Promise<JobView> {
    let retries = 0;
    for (;;) {
      let view: JobView;
      try {
        view = await this.job(id);
        retries = 0;
      } catch (err) {
        if (err instanceof ApiError && err.status < 500) throw err;
        if (++retries > maxRetries) throw err;
        await sleep(intervalMs * 2 ** retries);
        continue;
      }
      onProgress?.(view);
      if (view.state === "done" || view.state === "failed") return view;
      await sleep(intervalMs);
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
