// Shapes of the monitor REST payloads, as served. The console renders
// these as-is; it never derives or recomputes a verdict.

export interface HostRow {
  host_id: string;
  display_name: string;
  am_endpoint: string;
  resource: string;
  interval: number | null;
  anchor_key_id: string | null;
  last_verdict: string | null;
  last_completed_at: string | null;
  busy: boolean;
}

export interface Finding {
  node_id: number | null;
  text: string;
  severity: string;
}

export interface ReportDoc {
  verdict: string;
  findings: Finding[];
  supporting: Record<string, unknown>;
}

export interface EvaluationDoc {
  eval_id: string;
  host_id: string;
  trigger: string;
  state: string;
  requested_at: string;
  completed_at: string | null;
  report: ReportDoc | null;
  bundle_ref: string | null;
  error: string | null;
}

export interface NewHost {
  display_name: string;
  am_endpoint: string;
  resource: string;
  interval?: number;
}
