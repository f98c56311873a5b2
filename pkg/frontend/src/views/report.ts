import { api, ApiError } from "../api.js";
import { banner, clear, el, fmtTime } from "../dom.js";
import { pollEvaluation, type PollHandle } from "../poll.js";
import type { EvaluationDoc, Finding, ReportDoc } from "../types.js";

let activePoll: PollHandle | null = null;

function wellFormed(report: unknown): report is ReportDoc {
  if (typeof report !== "object" || report === null) {
    return false;
  }
  const doc = report as Record<string, unknown>;
  return typeof doc.verdict === "string" && Array.isArray(doc.findings);
}

function findingsTable(findings: Finding[]): HTMLElement {
  if (findings.length === 0) {
    return el("p", { class: "no-findings" }, "No findings.");
  }
  const body = el("tbody", {});
  for (const finding of findings) {
    body.append(
      el(
        "tr",
        { class: `severity-${finding.severity}` },
        el("td", {}, finding.severity),
        el("td", {}, finding.node_id === null ? "—" : String(finding.node_id)),
        el("td", { class: "finding-text" }, finding.text),
      ),
    );
  }
  return el(
    "table",
    { class: "findings" },
    el(
      "thead",
      {},
      el(
        "tr",
        {},
        el("th", {}, "severity"),
        el("th", {}, "node"),
        el("th", {}, "detail"),
      ),
    ),
    body,
  );
}

function supportingList(supporting: Record<string, unknown>): HTMLElement {
  const dl = el("dl", { class: "supporting" });
  for (const [key, value] of Object.entries(supporting)) {
    dl.append(el("dt", {}, key), el("dd", {}, String(value)));
  }
  return dl;
}

function renderCompleted(content: HTMLElement, record: EvaluationDoc): void {
  clear(content);
  if (!wellFormed(record.report)) {
    content.append(
      el(
        "div",
        { class: "banner", role: "alert" },
        "This evaluation record is malformed: it is marked completed but carries no readable report.",
      ),
    );
    return;
  }
  const report = record.report;
  const supporting = el(
    "details",
    { class: "supporting-wrap" },
    el("summary", {}, "Supporting data"),
    supportingList(report.supporting),
  );
  content.append(
    el(
      "p",
      { class: "headline" },
      "Verdict: ",
      // rendered exactly as the API stated it
      el("span", { class: `verdict verdict-${report.verdict}` }, report.verdict),
    ),
    findingsTable(report.findings),
    supporting,
  );
  if (record.bundle_ref) {
    content.append(
      el(
        "p",
        { class: "bundle-ref" },
        "Evidence bundle: ",
        el("code", {}, record.bundle_ref),
      ),
    );
  }
}

function renderRecord(content: HTMLElement, record: EvaluationDoc): void {
  if (record.state === "pending") {
    clear(content);
    content.append(
      el("p", { class: "pending" }, "Evaluation in progress…"),
    );
    return;
  }
  if (record.state === "error") {
    clear(content);
    content.append(
      el(
        "div",
        { class: "banner", role: "alert" },
        `Evaluation failed: ${record.error ?? "no detail recorded"}`,
      ),
    );
    return;
  }
  renderCompleted(content, record);
}

export async function reportDetailPage(
  root: HTMLElement,
  evalId: string,
): Promise<void> {
  if (activePoll) {
    activePoll.cancel();
    activePoll = null;
  }
  clear(root);
  const content = el("div", { class: "content" });
  root.append(
    el("p", {}, el("a", { href: "#/" }, "← hosts")),
    el("h1", {}, "Evaluation ", el("code", {}, evalId)),
    content,
  );

  let record: EvaluationDoc;
  try {
    record = await api.report(evalId);
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) {
      content.append(
        el("p", { class: "not-found" }, "No evaluation with this id exists."),
      );
      return;
    }
    const reason =
      err instanceof ApiError ? err.message : "monitor API unreachable";
    content.append(banner(reason, () => void reportDetailPage(root, evalId)));
    return;
  }

  content.append(
    el(
      "p",
      { class: "meta" },
      `Host ${record.host_id} · ${record.trigger} · requested ${fmtTime(record.requested_at)}`,
      record.completed_at ? ` · completed ${fmtTime(record.completed_at)}` : "",
    ),
  );
  const reportSlot = el("div", { class: "report-slot" });
  content.append(reportSlot);
  renderRecord(reportSlot, record);

  if (record.state === "pending") {
    activePoll = pollEvaluation(evalId, (update, err) => {
      if (err) {
        clear(reportSlot);
        reportSlot.append(banner(err.message));
        return;
      }
      if (update) {
        renderRecord(reportSlot, update);
      }
    });
  }
}
