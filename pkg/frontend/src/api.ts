// Typed client over the engine's HTTP API. The fetch function is injected so
// tests can drive the console against a canned mock server.

import type {
  CandidateRow,
  EventBatch,
  SessionListing,
  SessionPayload,
} from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
  }
}

export class SessionGone extends ApiError {}

export class ComparatorFailed extends ApiError {
  constructor(status: number, detail: unknown, public pair: [string, string]) {
    super(status, detail);
  }
}

function comparatorPair(detail: unknown): [string, string] | null {
  if (detail && typeof detail === "object" && "error" in detail) {
    const d = detail as { error?: string; pair?: string[] };
    if (d.error === "comparator_failure" && d.pair && d.pair.length === 2) {
      return [d.pair[0], d.pair[1]];
    }
  }
  return null;
}

export class ConsoleApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "Content-Type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    const payload = await response.json().catch(() => null);
    if (!response.ok) {
      const detail = payload && (payload as { detail?: unknown }).detail;
      if (response.status === 404) {
        throw new SessionGone(response.status, detail);
      }
      const pair = comparatorPair(detail);
      if (pair) {
        throw new ComparatorFailed(response.status, detail, pair);
      }
      throw new ApiError(response.status, detail);
    }
    return payload as T;
  }

  health() {
    return this.request<{ status: string }>("GET", "/healthz");
  }

  createSession(seed: string, config?: Record<string, unknown>) {
    return this.request<SessionPayload>("POST", "/sessions", { seed, config });
  }

  listSessions() {
    return this.request<{ sessions: SessionListing[] }>("GET", "/sessions");
  }

  getSession(id: string) {
    return this.request<SessionPayload>("GET", `/sessions/${id}`);
  }

  advanceRound(id: string) {
    return this.request<Record<string, unknown>>("POST", `/sessions/${id}/rounds`);
  }

  explore(id: string) {
    return this.request<{ candidates: CandidateRow[] }>("POST", `/sessions/${id}/explore`);
  }

  dedup(id: string) {
    return this.request<{ unique: string[]; removed: string[] }>("POST", `/sessions/${id}/dedup`);
  }

  rank(id: string) {
    return this.request<Record<string, unknown>>("POST", `/sessions/${id}/rank`);
  }

  candidates(id: string) {
    return this.request<{ candidates: CandidateRow[] }>("GET", `/sessions/${id}/candidates`);
  }

  flagCandidate(id: string, index: number, flag: string | null) {
    return this.request<{ index: number; flag: string | null }>(
      "POST",
      `/sessions/${id}/candidates/${index}/flag`,
      { flag },
    );
  }

  submitOverride(id: string, templateId: string, body: string) {
    return this.request<{ override_id: number }>("PUT", `/sessions/${id}/prompt-override`, {
      template_id: templateId,
      body,
    });
  }

  events(id: string, after: number, waitSeconds = 0) {
    const query = `after=${after}&wait=${waitSeconds}`;
    return this.request<EventBatch>("GET", `/sessions/${id}/events?${query}`);
  }
}
