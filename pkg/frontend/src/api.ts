/**
 * Typed client for the service endpoints. Every domain number shown anywhere
 * in the UI comes out of these response types; nothing is recomputed locally.
 */

export interface ParallelDoc {
  tp: number;
  pp: number;
  ep: number;
  dp: number;
}

export interface RuntimeDoc {
  ctx_capacity: number | null;
  chunked_prefill: boolean;
  kv_mem_fraction: number;
  cuda_graph: boolean;
  backend: string;
}

export interface PoolDoc {
  replicas: number;
  parallel: ParallelDoc;
  batch: number;
  runtime: RuntimeDoc;
}

/** One evaluated deployment; combined rows carry parallel/runtime inline,
 * disaggregated rows split them per pool. speed is null when unbounded. */
export interface ReportEntry {
  mode: string;
  config: string;
  gpus: number;
  ttft_ms: number;
  tpot_ms: number;
  speed: number | null;
  throughput_per_gpu: number;
  feasible?: boolean;
  frontier?: boolean;
  model?: string;
  parallel?: ParallelDoc;
  batch?: number;
  runtime?: RuntimeDoc;
  prefill?: PoolDoc;
  decode?: PoolDoc;
  r_sys?: number;
}

export interface Diagnostics extends ReportEntry {
  violation_factor: number | null;
}

export interface ReportCounts {
  enumerated: number;
  evaluated: number;
  feasible: number;
  frontier: number;
  skipped: number;
}

export interface SearchReport {
  schema: string;
  version: string;
  model: string;
  backend: string;
  workload: Record<string, unknown>;
  counts: ReportCounts;
  rows: ReportEntry[];
  frontier: ReportEntry[];
  best: ReportEntry | null;
  diagnostics: Diagnostics | null;
  skipped: { config: string; reason: string }[];
  timing: { total_ms: number; per_candidate_median_ms: number };
}

export interface Meta {
  version: string;
  modes: string[];
  backends: string[];
  databases: { name: string; backend: string; backend_version: string; hardware: string; records: number }[];
  models: { name: string; num_layers: number; hidden_size: number; moe: boolean; weight_quant: string }[];
  hardware: { name: string; gpu_memory: number; mem_bandwidth: number; gpus_per_node: number }[];
  profiles: { backend: string; version: string; launcher: string }[];
}

export interface SearchRequest {
  db: string;
  model: string;
  workload: Record<string, unknown>;
  space?: Record<string, unknown> | null;
  jobs?: number;
}

export interface GenerateRequest {
  model: string;
  workload: Record<string, unknown>;
  entry: ReportEntry;
  backend?: string | null;
}

/** Search results as data: expected failure statuses are outcomes, not throws. */
export type SearchOutcome =
  | { kind: "report"; report: SearchReport }
  | { kind: "empty"; diagnostics: Diagnostics | null; counts: ReportCounts | null }
  | { kind: "error"; status: number; message: string };

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => globalThis.fetch(...args),
  ) {}

  async fetchMeta(): Promise<Meta> {
    const resp = await this.fetchFn(`${this.base}/api/v1/meta`);
    if (!resp.ok) throw new Error(`meta failed: ${resp.status}`);
    return resp.json();
  }

  async runSearch(req: SearchRequest, signal?: AbortSignal): Promise<SearchOutcome> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.base}/api/v1/search`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(req),
        signal,
      });
    } catch (e) {
      if ((e as Error).name === "AbortError") throw e;
      return { kind: "error", status: 0, message: (e as Error).message };
    }
    if (resp.status === 200) {
      return { kind: "report", report: await resp.json() };
    }
    const detail = (await resp.json().catch(() => ({})))?.detail ?? {};
    if (resp.status === 422) {
      return { kind: "empty", diagnostics: detail.diagnostics ?? null, counts: detail.counts ?? null };
    }
    return { kind: "error", status: resp.status, message: detail.error ?? resp.statusText };
  }

  /** Returns the launch plan bytes exactly as the service sent them. */
  async generatePlan(req: GenerateRequest): Promise<string> {
    const resp = await this.fetchFn(`${this.base}/api/v1/generate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!resp.ok) {
      const detail = (await resp.json().catch(() => ({})))?.detail ?? {};
      throw new Error(detail.error ?? `generate failed: ${resp.status}`);
    }
    return resp.text();
  }
}
