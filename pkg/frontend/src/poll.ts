import { api } from "./api.js";
import type { EvaluationDoc } from "./types.js";

export const POLL_INTERVAL_MS = 2000;

export interface PollHandle {
  cancel(): void;
  /** Resolves with the final record, or null if cancelled / the API broke. */
  settled: Promise<EvaluationDoc | null>;
}

/**
 * Watch one evaluation until it leaves the pending state.
 *
 * At most one request is ever in flight: the next probe is scheduled
 * only after the previous answer (or failure) has landed.
 */
export function pollEvaluation(
  evalId: string,
  onUpdate: (record: EvaluationDoc | null, err: Error | null) => void,
  intervalMs: number = POLL_INTERVAL_MS,
): PollHandle {
  let cancelled = false;
  let timer: ReturnType<typeof setTimeout> | null = null;
  let resolveSettled: (value: EvaluationDoc | null) => void;
  const settled = new Promise<EvaluationDoc | null>((resolve) => {
    resolveSettled = resolve;
  });

  const probe = async () => {
    timer = null;
    if (cancelled) {
      resolveSettled(null);
      return;
    }
    let record: EvaluationDoc;
    try {
      record = await api.report(evalId);
    } catch (err) {
      resolveSettled(null);
      if (!cancelled) {
        onUpdate(null, err as Error);
      }
      return;
    }
    if (cancelled) {
      resolveSettled(null);
      return;
    }
    onUpdate(record, null);
    if (record.state === "pending") {
      timer = setTimeout(probe, intervalMs);
    } else {
      resolveSettled(record);
    }
  };
  void probe();

  return {
    cancel() {
      cancelled = true;
      if (timer !== null) {
        clearTimeout(timer);
        timer = null;
        resolveSettled(null);
      }
    },
    settled,
  };
}
