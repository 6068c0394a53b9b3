// Thin client for the engine's review API. The fetch function is injectable
// so tests and the headless driver can run without a browser.

import {
  EscalationQueue,
  EscalationQueueSchema,
  RelabelQueue,
  RelabelQueueSchema,
  ResolutionPost,
  ResolutionPostSchema,
  RoundState,
  RoundStateSchema,
  TriageQueue,
  TriageQueueSchema,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string }
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(message: string, public readonly status: number) {
    super(message);
  }
}

export class ReviewApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch as unknown as FetchLike
  ) {}

  private async get(path: string): Promise<unknown> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`);
    const body = await resp.json();
    if (!resp.ok) {
      const message = (body as { error?: string }).error ?? `GET ${path} failed`;
      throw new ApiError(message, resp.status);
    }
    return body;
  }

  async triageQueue(): Promise<TriageQueue> {
    return TriageQueueSchema.parse(await this.get("/queue/triage"));
  }

  async escalationQueue(): Promise<EscalationQueue> {
    return EscalationQueueSchema.parse(await this.get("/queue/escalations"));
  }

  async relabelQueue(): Promise<RelabelQueue> {
    return RelabelQueueSchema.parse(await this.get("/queue/relabel"));
  }

  async roundState(): Promise<RoundState> {
    return RoundStateSchema.parse(await this.get("/rounds/state"));
  }

  imageUrl(sampleId: string): string {
    return `${this.baseUrl}/sample/${sampleId}/image`;
  }

  /** Validates the payload against the contract before sending. */
  async postResolutions(payload: ResolutionPost): Promise<number> {
    const checked = ResolutionPostSchema.parse(payload);
    const resp = await this.fetchFn(`${this.baseUrl}/resolutions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(checked),
    });
    const body = (await resp.json()) as { accepted?: number; error?: string };
    if (!resp.ok) {
      // A stale round makes the engine reject the batch; the caller shows a
      // refresh banner instead of retrying blindly.
      throw new ApiError(body.error ?? "resolution rejected", resp.status);
    }
    return body.accepted ?? 0;
  }
}
