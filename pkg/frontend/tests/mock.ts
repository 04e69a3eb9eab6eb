// Minimal mock API server: routes "<METHOD> <path>" to canned payloads.

import type { FetchLike } from "../src/api";

export interface RecordedCall {
  method: string;
  path: string;
  body: unknown;
}

export interface MockServer {
  fetch: FetchLike;
  calls: RecordedCall[];
}

type Route = { status?: number; body: unknown } | unknown;

export function mockServer(routes: Record<string, Route>): MockServer {
  const calls: RecordedCall[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    calls.push({
      method,
      path,
      body: init?.body ? JSON.parse(init.body as string) : undefined,
    });
    const route = routes[`${method} ${path}`];
    if (route === undefined) {
      return new Response(JSON.stringify({ detail: `no route ${method} ${path}` }), {
        status: 404,
        headers: { "Content-Type": "application/json" },
      });
    }
    const { status, body } =
      route && typeof route === "object" && "status" in (route as object)
        ? (route as { status?: number; body: unknown })
        : { status: 200, body: route };
    return new Response(JSON.stringify(body), {
      status: status ?? 200,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { fetch: fetchFn, calls };
}
