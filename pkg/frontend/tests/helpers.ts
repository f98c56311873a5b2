import { vi } from "vitest";
import type { EvaluationDoc, HostRow, ReportDoc } from "../src/types.js";

export interface Call {
  method: string;
  path: string;
  body: unknown;
}

export type Responder = (call: Call) => Response | Promise<Response>;

export function jsonResponse(status: number, body: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  } as unknown as Response;
}

/** Swap fetch for a scripted responder; returns the growing call log. */
export function installFetch(respond: Responder): Call[] {
  const calls: Call[] = [];
  vi.stubGlobal(
    "fetch",
    async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
      const call: Call = {
        method: init?.method ?? "GET",
        path: String(input),
        body: init?.body ? JSON.parse(String(init.body)) : null,
      };
      calls.push(call);
      return respond(call);
    },
  );
  return calls;
}

export function hostRow(over: Partial<HostRow> = {}): HostRow {
  return {
    host_id: "h1",
    display_name: "web-01",
    am_endpoint: "attester-host",
    resource: "system-files",
    interval: null,
    anchor_key_id: null,
    last_verdict: null,
    last_completed_at: null,
    busy: false,
    ...over,
  };
}

export function evalDoc(over: Partial<EvaluationDoc> = {}): EvaluationDoc {
  return {
    eval_id: "ev1",
    host_id: "h1",
    trigger: "manual",
    state: "pending",
    requested_at: "2026-08-22T10:00:00Z",
    completed_at: null,
    report: null,
    bundle_ref: null,
    error: null,
    ...over,
  };
}

export function passReport(): ReportDoc {
  return { verdict: "pass", findings: [], supporting: { node_count: 4 } };
}

/** Let the chained promise callbacks behind a click or fetch settle. */
export async function flush(): Promise<void> {
  for (let i = 0; i < 12; i++) {
    await Promise.resolve();
  }
}
