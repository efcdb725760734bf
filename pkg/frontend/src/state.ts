/**
 * Explorer state machine.
 *
 * One store owns the controls, the last acknowledged search response, and the
 * selection. Numeric edits are debounced; toggles query immediately. Requests
 * carry a monotonically increasing id and only the newest id may update the
 * state, so a slow response can never overwrite a fresher one. At most one
 * request is in flight: dispatching aborts its predecessor.
 */

import {
  ApiClient,
  Diagnostics,
  ReportCounts,
  ReportEntry,
  SearchOutcome,
  SearchReport,
} from "./api.js";

export const NUMERIC_DEBOUNCE_MS = 300;

export interface Controls {
  db: string;
  model: string;
  isl: number;
  osl: number;
  ttftLimit: number | null;
  minSpeed: number | null;
  gpuBudget: number | null;
  modes: Record<string, boolean>;
}

export type NumericField = "isl" | "osl" | "ttftLimit" | "minSpeed" | "gpuBudget";

export type Status = "idle" | "loading" | "ready" | "empty" | "error";

export interface ExplorerState {
  controls: Controls;
  status: Status;
  report: SearchReport | null;
  diagnostics: Diagnostics | null;
  counts: ReportCounts | null;
  error: string | null;
  /** Index into report.frontier; null when nothing is selectable. */
  selected: number | null;
}

export function defaultControls(): Controls {
  return {
    db: "",
    model: "",
    isl: 1024,
    osl: 128,
    ttftLimit: 2000,
    minSpeed: 10,
    gpuBudget: null,
    modes: { static: true, aggregated: true, disaggregated: true },
  };
}

function workloadDoc(c: Controls): Record<string, unknown> {
  const doc: Record<string, unknown> = { isl: c.isl, osl: c.osl };
  if (c.ttftLimit !== null) doc.ttft_limit_ms = c.ttftLimit;
  if (c.minSpeed !== null) doc.min_speed = c.minSpeed;
  if (c.gpuBudget !== null) doc.gpu_budgets = [c.gpuBudget];
  doc.modes = Object.keys(c.modes).filter((m) => c.modes[m]);
  return doc;
}

/** Locate the best entry inside the frontier; mode+config identifies a row. */
export function bestIndex(report: SearchReport): number | null {
  const best = report.best;
  if (!best) return null;
  const i = report.frontier.findIndex(
    (e) => e.mode === best.mode && e.config === best.config,
  );
  return i >= 0 ? i : null;
}

export class ExplorerStore {
  private state: ExplorerState = {
    controls: defaultControls(),
    status: "idle",
    report: null,
    diagnostics: null,
    counts: null,
    error: null,
    selected: null,
  };
  private listeners: ((s: ExplorerState) => void)[] = [];
  private timer: ReturnType<typeof setTimeout> | null = null;
  private seq = 0;
  private inflight: AbortController | null = null;

  constructor(private readonly api: ApiClient) {}

  getState(): ExplorerState {
    return this.state;
  }

  subscribe(fn: (s: ExplorerState) => void): () => void {
    this.listeners.push(fn);
    fn(this.state);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(patch: Partial<ExplorerState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  /** Debounced: a burst of edits issues a single search for the final value. */
  setNumeric(field: NumericField, value: number | null): void {
    this.emit({ controls: { ...this.state.controls, [field]: value } });
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.dispatch();
    }, NUMERIC_DEBOUNCE_MS);
  }

  /** Immediate: toggles re-query at once, folding in any pending numeric edit. */
  setMode(mode: string, on: boolean): void {
    const modes = { ...this.state.controls.modes, [mode]: on };
    this.emit({ controls: { ...this.state.controls, modes } });
    this.dispatchNow();
  }

  setContext(db: string, model: string): void {
    this.emit({ controls: { ...this.state.controls, db, model } });
    this.dispatchNow();
  }

  select(index: number | null): void {
    const frontier = this.state.report?.frontier ?? [];
    if (index !== null && (index < 0 || index >= frontier.length)) return;
    this.emit({ selected: index });
  }

  selectedEntry(): ReportEntry | null {
    const { report, selected } = this.state;
    if (!report || selected === null) return null;
    return report.frontier[selected] ?? null;
  }

  dispatchNow(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    void this.dispatch();
  }

  private async dispatch(): Promise<void> {
    const c = this.state.controls;
    if (!c.db || !c.model) return;
    if (!Object.values(c.modes).some(Boolean)) {
      this.seq++; // anything already in flight answers outdated controls
      this.inflight?.abort();
      this.emit({ status: "error", error: "select at least one serving mode" });
      return;
    }
    const id = ++this.seq;
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.emit({ status: "loading", error: null });

    let outcome: SearchOutcome;
    try {
      outcome = await this.api.runSearch(
        { db: c.db, model: c.model, workload: workloadDoc(c) },
        controller.signal,
      );
    } catch {
      return; // aborted: a newer request owns the state now
    }
    if (id !== this.seq) return; // stale: discard silently

    if (outcome.kind === "report") {
      this.emit({
        status: "ready",
        report: outcome.report,
        diagnostics: null,
        counts: outcome.report.counts,
        error: null,
        selected: bestIndex(outcome.report),
      });
    } else if (outcome.kind === "empty") {
      // keep the previous chart data out; controls stay as typed
      this.emit({
        status: "empty",
        report: null,
        diagnostics: outcome.diagnostics,
        counts: outcome.counts,
        error: null,
        selected: null,
      });
    } else {
      this.emit({ status: "error", error: outcome.message });
    }
  }

  /** Launch plan for the selected entry, byte-for-byte as the API returned it. */
  async exportSelection(backend?: string | null): Promise<{ filename: string; bytes: string } | null> {
    const entry = this.selectedEntry();
    const report = this.state.report;
    if (!entry || !report) return null;
    const bytes = await this.api.generatePlan({
      model: report.model,
      workload: report.workload,
      entry,
      backend: backend ?? null,
    });
    return { filename: `launch-${entry.mode}-${report.model}.yaml`, bytes };
  }
}
