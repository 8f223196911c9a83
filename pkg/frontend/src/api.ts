/** Typed client for the review service.
 *
 * Every documented endpoint has exactly one method here and the UI goes
 * through this client only, so contract tests can enumerate the calls the
 * frontend is allowed to make.  A 409 surfaces as ConflictError (the queue
 * moved or the item is already resolved); everything else non-2xx becomes
 * ApiError with a retriable flag.
 */

import type {
  GrammarView,
  ItemDetail,
  QueueFilter,
  QueuePage,
  Resolution,
  ResolutionResult,
  ServiceStats,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly retriable: boolean,
  ) {
    super(message);
  }
}

export class ConflictError extends Error {
  constructor(
    message: string,
    readonly graphVersion: number | null,
  ) {
    super(message);
  }
}

interface ErrorBody {
  error?: string;
  graph_version?: number;
}

export class ReviewApi {
  /** Highest graph version seen in any response; lets the view detect that
   * the server moved on since its last fetch. */
  lastSeenVersion: number | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`, 0, true);
    }
    const body = (await response.json().catch(() => ({}))) as T & ErrorBody;
    if (typeof body.graph_version === "number") {
      this.lastSeenVersion = Math.max(this.lastSeenVersion ?? 0, body.graph_version);
    }
    if (response.status === 409) {
      throw new ConflictError(body.error ?? "conflict", body.graph_version ?? null);
    }
    if (!response.ok) {
      throw new ApiError(body.error ?? `HTTP ${response.status}`, response.status, response.status >= 500);
    }
    return body;
  }

  fetchQueue(filter: QueueFilter, page: number, pageSize: number): Promise<QueuePage> {
    const params = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (filter.minScore !== undefined) params.set("min_score", String(filter.minScore));
    if (filter.status !== undefined) params.set("status", filter.status);
    return this.request(`/api/anomalies?${params.toString()}`);
  }

  fetchItem(id: string): Promise<ItemDetail> {
    return this.request(`/api/anomalies/${id}`);
  }

  submitResolution(id: string, resolution: Resolution): Promise<ResolutionResult> {
    return this.request(`/api/anomalies/${id}/resolution`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(resolution),
    });
  }

  rescore(): Promise<ServiceStats> {
    return this.request("/api/rescore", { method: "POST", body: "{}" });
  }

  fetchStats(): Promise<ServiceStats> {
    return this.request("/api/stats");
  }

  fetchGrammar(): Promise<GrammarView> {
    return this.request("/api/grammar");
  }
}
