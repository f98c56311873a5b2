import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { hostListPage } from "../src/views/hosts.js";
import {
  evalDoc,
  flush,
  hostRow,
  installFetch,
  jsonResponse,
  passReport,
} from "./helpers.js";

let root: HTMLElement;

beforeEach(() => {
  root = document.createElement("div");
  document.body.append(root);
});

afterEach(() => {
  root.remove();
  vi.unstubAllGlobals();
  vi.useRealTimers();
});

describe("host list", () => {
  it("renders each host's verdict exactly as the API served it", async () => {
    installFetch(({ path }) =>
      path === "/hosts"
        ? jsonResponse(200, [
            hostRow({
              host_id: "h1",
              display_name: "web-01",
              last_verdict: "pass",
              last_completed_at: "2026-08-21T09:30:00Z",
            }),
            // a verdict string this console has no styling for must still
            // come through untouched — the UI never interprets verdicts
            hostRow({
              host_id: "h2",
              display_name: "db-02",
              last_verdict: "suspicious",
            }),
          ])
        : jsonResponse(500, { error: `unexpected ${path}` }),
    );

    await hostListPage(root);

    const badges = [...root.querySelectorAll("td > .verdict")].map(
      (node) => node.textContent,
    );
    expect(badges).toEqual(["pass", "suspicious"]);
    expect(root.textContent).toContain("web-01");
    expect(root.textContent).toContain("db-02");
  });

  it("shows the add-host form as the empty state", async () => {
    installFetch(() => jsonResponse(200, []));

    await hostListPage(root);

    expect(root.querySelector("table.hosts")).toBeNull();
    expect(root.querySelector(".empty-state")).not.toBeNull();
    expect(root.querySelector("form.add-host")).not.toBeNull();
  });

  it("posts the add-host form and reloads the roster", async () => {
    const calls = installFetch(({ method, path }) => {
      if (path === "/hosts" && method === "POST") {
        return jsonResponse(201, hostRow({ display_name: "edge-03" }));
      }
      if (path === "/hosts") {
        return jsonResponse(200, []);
      }
      return jsonResponse(500, { error: `unexpected ${method} ${path}` });
    });

    await hostListPage(root);
    const form = root.querySelector("form.add-host") as HTMLFormElement;
    const input = (name: string) =>
      form.querySelector(`input[name="${name}"]`) as HTMLInputElement;
    input("display_name").value = "edge-03";
    input("am_endpoint").value = "tcp:10.0.0.5:9103";
    input("resource").value = "system-files";
    form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
    await flush();

    const post = calls.find((c) => c.method === "POST");
    expect(post?.body).toEqual({
      display_name: "edge-03",
      am_endpoint: "tcp:10.0.0.5:9103",
      resource: "system-files",
    });
    const rosterLoads = calls.filter(
      (c) => c.method === "GET" && c.path === "/hosts",
    );
    expect(rosterLoads.length).toBe(2);
  });

  it("keeps standing and shows a banner when the API is unreachable", async () => {
    vi.stubGlobal("fetch", async () => {
      throw new TypeError("fetch failed");
    });

    await hostListPage(root);

    const strip = root.querySelector('[role="alert"]');
    expect(strip).not.toBeNull();
    expect(strip!.textContent).toContain("monitor API unreachable");
    expect(root.querySelector("h1")).not.toBeNull();
  });

  it("surfaces a 503 as a banner and recovers via retry", async () => {
    let broken = true;
    installFetch(({ path }) => {
      if (broken) {
        return jsonResponse(503, { error: "monitor is shutting down" });
      }
      if (path === "/hosts") {
        return jsonResponse(200, [hostRow()]);
      }
      return jsonResponse(500, { error: `unexpected ${path}` });
    });

    await hostListPage(root);
    const strip = root.querySelector('[role="alert"]');
    expect(strip!.textContent).toContain("monitor is shutting down");

    broken = false;
    (root.querySelector("button.retry") as HTMLButtonElement).click();
    await flush();
    expect(root.querySelector("table.hosts")).not.toBeNull();
  });
});

describe("evaluate now", () => {
  it("walks pending to completed and links the report", async () => {
    vi.useFakeTimers();
    let polls = 0;
    installFetch(({ method, path }) => {
      if (path === "/hosts" && method === "GET") {
        return jsonResponse(200, [hostRow()]);
      }
      if (path === "/hosts/h1/evaluate" && method === "POST") {
        return jsonResponse(201, { eval_id: "ev1" });
      }
      if (path === "/reports/ev1") {
        polls += 1;
        return polls < 3
          ? jsonResponse(200, evalDoc())
          : jsonResponse(
              200,
              evalDoc({
                state: "completed",
                completed_at: "2026-08-22T10:00:05Z",
                report: passReport(),
              }),
            );
      }
      return jsonResponse(500, { error: `unexpected ${method} ${path}` });
    });

    await hostListPage(root);
    (root.querySelector("button.evaluate") as HTMLButtonElement).click();
    await flush();

    const latest = root.querySelector("td.latest")!;
    expect(latest.textContent).toContain("pending");
    expect(polls).toBe(1);

    await vi.advanceTimersByTimeAsync(2000);
    await flush();
    expect(polls).toBe(2);
    expect(latest.textContent).toContain("pending");

    await vi.advanceTimersByTimeAsync(2000);
    await flush();
    expect(polls).toBe(3);
    expect(latest.querySelector(".verdict")!.textContent).toBe("pass");
    expect(latest.querySelector("a")!.getAttribute("href")).toBe(
      "#/report/ev1",
    );

    // the evaluation settled; the poller must go quiet
    await vi.advanceTimersByTimeAsync(8000);
    expect(polls).toBe(3);
  });

  it("never overlaps polls while an answer is outstanding", async () => {
    vi.useFakeTimers();
    let release!: (response: Response) => void;
    let reportCalls = 0;
    installFetch(({ method, path }) => {
      if (path === "/hosts") {
        return jsonResponse(200, [hostRow()]);
      }
      if (path === "/hosts/h1/evaluate") {
        return jsonResponse(201, { eval_id: "ev1" });
      }
      if (path === "/reports/ev1") {
        reportCalls += 1;
        if (reportCalls === 1) {
          return new Promise<Response>((resolve) => {
            release = resolve;
          });
        }
        return jsonResponse(
          200,
          evalDoc({ state: "completed", report: passReport() }),
        );
      }
      return jsonResponse(500, { error: `unexpected ${method} ${path}` });
    });

    await hostListPage(root);
    (root.querySelector("button.evaluate") as HTMLButtonElement).click();
    await flush();
    expect(reportCalls).toBe(1);

    // five nominal intervals pass while the first answer hangs: no new probe
    await vi.advanceTimersByTimeAsync(10_000);
    expect(reportCalls).toBe(1);

    release(jsonResponse(200, evalDoc()));
    await flush();
    await vi.advanceTimersByTimeAsync(2000);
    await flush();
    expect(reportCalls).toBe(2);
  });

  it("reports a failed kick-off without wedging the button", async () => {
    installFetch(({ method, path }) => {
      if (path === "/hosts" && method === "GET") {
        return jsonResponse(200, [hostRow()]);
      }
      if (path === "/hosts/h1/evaluate") {
        return jsonResponse(503, { error: "attestation manager busy" });
      }
      return jsonResponse(500, { error: `unexpected ${method} ${path}` });
    });

    await hostListPage(root);
    const button = root.querySelector("button.evaluate") as HTMLButtonElement;
    button.click();
    await flush();

    expect(root.querySelector('[role="alert"]')!.textContent).toContain(
      "attestation manager busy",
    );
    expect(button.disabled).toBe(false);
  });
});
