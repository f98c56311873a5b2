import { hostListPage } from "./views/hosts.js";
import { reportDetailPage } from "./views/report.js";

const REPORT_ROUTE = /^#\/report\/([0-9a-f-]+)$/;

export function route(): void {
  const root = document.getElementById("app");
  if (!root) {
    return;
  }
  const match = REPORT_ROUTE.exec(window.location.hash);
  if (match) {
    void reportDetailPage(root, match[1]);
  } else {
    void hostListPage(root);
  }
}

window.addEventListener("hashchange", route);
window.addEventListener("DOMContentLoaded", route);
if (document.readyState !== "loading") {
  route();
}
