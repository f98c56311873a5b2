import type { EvaluationDoc, HostRow, NewHost } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

declare global {
  interface Window {
    API_BASE?: string;
    API_TOKEN?: string;
  }
}

/** Where the monitor lives. Runtime setting wins, then the value baked
 * into the page at deploy time, then same-origin. */
export function apiBase(): string {
  if (typeof window !== "undefined" && window.API_BASE) {
    return window.API_BASE.replace(/\/+$/, "");
  }
  if (typeof document !== "undefined") {
    const baked = document
      .querySelector('meta[name="api-base"]')
      ?.getAttribute("content");
    if (baked) {
      return baked.replace(/\/+$/, "");
    }
  }
  return "";
}

async function call<T>(path: string, init?: RequestInit): Promise<T> {
  const headers: Record<string, string> = { Accept: "application/json" };
  if (init?.body) {
    headers["Content-Type"] = "application/json";
  }
  if (typeof window !== "undefined" && window.API_TOKEN) {
    headers["X-Auth-Token"] = window.API_TOKEN;
  }
  let response: Response;
  try {
    response = await fetch(apiBase() + path, { ...init, headers });
  } catch {
    throw new ApiError(0, "monitor API unreachable");
  }
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    // fall through; a null body on an ok status is handled below
  }
  if (!response.ok) {
    const detail =
      body && typeof body === "object" && "error" in body
        ? String((body as { error: unknown }).error)
        : `request failed (${response.status})`;
    throw new ApiError(response.status, detail);
  }
  if (body === null) {
    throw new ApiError(response.status, "monitor answered with a non-JSON body");
  }
  return body as T;
}

export const api = {
  hosts(): Promise<HostRow[]> {
    return call("/hosts");
  },
  addHost(fields: NewHost): Promise<HostRow> {
    return call("/hosts", { method: "POST", body: JSON.stringify(fields) });
  },
  removeHost(hostId: string): Promise<{ removed: string }> {
    return call(`/hosts/${hostId}`, { method: "DELETE" });
  },
  evaluate(hostId: string): Promise<{ eval_id: string }> {
    return call(`/hosts/${hostId}/evaluate`, {
      method: "POST",
      body: JSON.stringify({}),
    });
  },
  reports(hostId: string): Promise<EvaluationDoc[]> {
    return call(`/hosts/${hostId}/reports`);
  },
  report(evalId: string): Promise<EvaluationDoc> {
    return call(`/reports/${evalId}`);
  },
  health(): Promise<{ status: string }> {
    return call("/healthz");
  },
};
