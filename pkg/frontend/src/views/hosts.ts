import { api, ApiError } from "../api.js";
import { banner, clear, el, fmtTime } from "../dom.js";
import { pollEvaluation, type PollHandle } from "../poll.js";
import type { EvaluationDoc, HostRow, NewHost } from "../types.js";

// Polls started from this page; cancelled whenever the page re-renders
// so a stale loop never writes into a replaced table.
let activePolls: PollHandle[] = [];

function verdictBadge(verdict: string | null): HTMLElement {
  // the displayed text is the API's verdict field, untouched
  const text = verdict ?? "—";
  const cls =
    verdict === "pass" || verdict === "fail" || verdict === "error"
      ? `verdict verdict-${verdict}`
      : "verdict";
  return el("span", { class: cls }, text);
}

function addHostForm(onDone: () => void, showError: (msg: string) => void): HTMLElement {
  const name = el("input", { name: "display_name", placeholder: "display name" });
  const endpoint = el("input", {
    name: "am_endpoint",
    placeholder: "peer name or tcp:host:port",
  });
  const resource = el("input", { name: "resource", placeholder: "resource" });
  const interval = el("input", {
    name: "interval",
    placeholder: "interval seconds (blank = on demand)",
  });
  const submit = el("button", { type: "submit" }, "Add host");
  const form = el(
    "form",
    { class: "add-host" },
    name,
    endpoint,
    resource,
    interval,
    submit,
  );
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const fields: NewHost = {
      display_name: name.value.trim(),
      am_endpoint: endpoint.value.trim(),
      resource: resource.value.trim(),
    };
    if (interval.value.trim()) {
      fields.interval = Number(interval.value.trim());
    }
    submit.disabled = true;
    api
      .addHost(fields)
      .then(onDone)
      .catch((err: Error) => {
        submit.disabled = false;
        showError(err.message);
      });
  });
  return form;
}

function evaluationCell(): HTMLElement {
  return el("td", { class: "latest" });
}

function showEvaluation(cell: HTMLElement, record: EvaluationDoc): void {
  clear(cell);
  if (record.state === "pending") {
    cell.append(el("span", { class: "pending" }, "pending…"));
    return;
  }
  const verdict =
    record.state === "completed" && record.report
      ? record.report.verdict
      : record.state; // "error"
  cell.append(
    verdictBadge(verdict),
    " ",
    el("a", { href: `#/report/${record.eval_id}` }, "report"),
  );
}

function hostTable(
  hosts: HostRow[],
  refresh: () => void,
  showError: (msg: string) => void,
): HTMLElement {
  const head = el(
    "tr",
    {},
    el("th", {}, "host"),
    el("th", {}, "resource"),
    el("th", {}, "last verdict"),
    el("th", {}, "last evaluated"),
    el("th", {}, "latest"),
    el("th", {}, ""),
  );
  const body = el("tbody", {});
  for (const host of hosts) {
    const latest = evaluationCell();
    const evaluate = el("button", { class: "evaluate" }, "Evaluate now");
    evaluate.addEventListener("click", () => {
      evaluate.disabled = true;
      clear(latest);
      latest.append(el("span", { class: "pending" }, "pending…"));
      api
        .evaluate(host.host_id)
        .then(({ eval_id }) => {
          const handle = pollEvaluation(eval_id, (record, err) => {
            if (err) {
              showError(err.message);
              clear(latest);
              return;
            }
            if (record) {
              showEvaluation(latest, record);
            }
          });
          activePolls.push(handle);
          void handle.settled.then(() => {
            evaluate.disabled = false;
          });
        })
        .catch((err: Error) => {
          evaluate.disabled = false;
          clear(latest);
          showError(err.message);
        });
    });

    const remove = el("button", { class: "remove", title: "remove host" }, "✕");
    remove.addEventListener("click", () => {
      api.removeHost(host.host_id).then(refresh).catch((err: Error) => {
        showError(err.message);
      });
    });

    const history = el("a", { href: "#", class: "history" }, host.display_name);
    const detail = el("tr", { class: "history-row" });
    history.addEventListener("click", (event) => {
      event.preventDefault();
      if (detail.isConnected) {
        detail.remove();
        return;
      }
      api
        .reports(host.host_id)
        .then((records) => {
          clear(detail);
          const list = el("ul", { class: "history-list" });
          for (const record of records.slice(0, 20)) {
            const verdict =
              record.state === "completed" && record.report
                ? record.report.verdict
                : record.state;
            list.append(
              el(
                "li",
                {},
                fmtTime(record.requested_at),
                " — ",
                verdictBadge(verdict),
                " ",
                el("a", { href: `#/report/${record.eval_id}` }, "view"),
              ),
            );
          }
          if (records.length === 0) {
            list.append(el("li", {}, "no evaluations yet"));
          }
          detail.append(el("td", { colspan: "6" }, list));
          row.after(detail);
        })
        .catch((err: Error) => {
          showError(err.message);
        });
    });

    const row = el(
      "tr",
      {},
      el("td", {}, history, " ", el("small", {}, host.am_endpoint)),
      el("td", {}, host.resource),
      el("td", {}, verdictBadge(host.last_verdict)),
      el("td", {}, fmtTime(host.last_completed_at)),
      latest,
      el("td", {}, evaluate, " ", remove),
    );
    body.append(row);
  }
  return el("table", { class: "hosts" }, el("thead", {}, head), body);
}

export async function hostListPage(root: HTMLElement): Promise<void> {
  for (const handle of activePolls) {
    handle.cancel();
  }
  activePolls = [];
  clear(root);

  const errorSlot = el("div", { class: "error-slot" });
  const content = el("div", { class: "content" });
  root.append(el("h1", {}, "Monitored hosts"), errorSlot, content);

  const refresh = () => void hostListPage(root);
  const showError = (msg: string) => {
    clear(errorSlot);
    errorSlot.append(banner(msg, refresh));
  };

  let hosts: HostRow[];
  try {
    hosts = await api.hosts();
  } catch (err) {
    const reason =
      err instanceof ApiError ? err.message : "monitor API unreachable";
    errorSlot.append(banner(reason, refresh));
    return;
  }

  if (hosts.length === 0) {
    content.append(
      el(
        "p",
        { class: "empty-state" },
        "No hosts are monitored yet. Add the first one:",
      ),
    );
  } else {
    content.append(hostTable(hosts, refresh, showError));
  }
  content.append(addHostForm(refresh, showError));
}
