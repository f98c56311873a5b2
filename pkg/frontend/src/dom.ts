/** Tiny element builder; children may be nodes or strings. */
export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") {
      node.className = value;
    } else {
      node.setAttribute(key, value);
    }
  }
  for (const child of children) {
    node.append(child instanceof Node ? child : document.createTextNode(child));
  }
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) {
    node.removeChild(node.firstChild);
  }
}

/** A dismissable error strip with an optional retry action. */
export function banner(message: string, onRetry?: () => void): HTMLElement {
  const strip = el("div", { class: "banner", role: "alert" }, message);
  if (onRetry) {
    const retry = el("button", { class: "retry" }, "Retry");
    retry.addEventListener("click", onRetry);
    strip.append(" ", retry);
  }
  return strip;
}

export function fmtTime(stamp: string | null): string {
  if (!stamp) {
    return "—";
  }
  const parsed = new Date(stamp);
  return isNaN(parsed.getTime()) ? stamp : parsed.toLocaleString();
}
