/**
 * Wires the controls, the store, and the chart together. All rendering reads
 * from the store's state; all user input goes through the store's setters.
 */

import { ApiClient, Meta, ReportEntry } from "./api.js";
import { buildScene, renderChart } from "./chart.js";
import { ExplorerStore, NumericField } from "./state.js";

const api = new ApiClient();
const store = new ExplorerStore(api);

const $ = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
};

const dbSelect = $<HTMLSelectElement>("db");
const modelSelect = $<HTMLSelectElement>("model");
const backendSelect = $<HTMLSelectElement>("backend");
const statusLine = $<HTMLElement>("status");
const chartSvg = $("chart") as unknown as SVGSVGElement;
const diagPanel = $<HTMLElement>("diagnostics");
const drawer = $<HTMLElement>("drawer");
const exportBtn = $<HTMLButtonElement>("export");

function bindNumeric(id: string, field: NumericField, optional = false): void {
  const input = $<HTMLInputElement>(id);
  input.addEventListener("input", () => {
    const raw = input.value.trim();
    if (raw === "" && optional) {
      store.setNumeric(field, null);
      return;
    }
    const value = Number(raw);
    if (Number.isFinite(value)) store.setNumeric(field, value);
  });
}

function bindMode(id: string, mode: string): void {
  const box = $<HTMLInputElement>(id);
  box.addEventListener("change", () => store.setMode(mode, box.checked));
}

function fillSelect(select: HTMLSelectElement, names: string[]): void {
  select.replaceChildren();
  for (const name of names) {
    const opt = document.createElement("option");
    opt.value = opt.textContent = name;
    select.appendChild(opt);
  }
}

function fmt(v: number | null | undefined): string {
  if (v === null || v === undefined) return "unbounded";
  return v >= 100 ? v.toFixed(1) : v.toPrecision(4);
}

function entryRows(entry: ReportEntry): [string, string][] {
  const rows: [string, string][] = [
    ["mode", entry.mode],
    ["config", entry.config],
    ["GPUs", String(entry.gpus)],
    ["TTFT", `${fmt(entry.ttft_ms)} ms`],
    ["TPOT", `${fmt(entry.tpot_ms)} ms`],
    ["speed", `${fmt(entry.speed)} tok/s/user`],
    ["throughput", `${fmt(entry.throughput_per_gpu)} tok/s/GPU`],
  ];
  if (entry.parallel) {
    const p = entry.parallel;
    rows.push(["parallelism", `tp${p.tp} pp${p.pp} ep${p.ep} dp${p.dp}`]);
    rows.push(["batch", String(entry.batch)]);
  }
  if (entry.prefill && entry.decode) {
    rows.push(["prefill", `${entry.prefill.replicas} x tp${entry.prefill.parallel.tp}, batch ${entry.prefill.batch}`]);
    rows.push(["decode", `${entry.decode.replicas} x tp${entry.decode.parallel.tp}, batch ${entry.decode.batch}`]);
  }
  const runtime = entry.runtime ?? entry.decode?.runtime;
  if (runtime) {
    rows.push(["chunked prefill", runtime.chunked_prefill ? "on" : "off"]);
    rows.push(["CUDA graphs", runtime.cuda_graph ? "on" : "off"]);
    rows.push(["KV memory fraction", String(runtime.kv_mem_fraction)]);
  }
  return rows;
}

function renderDrawer(entry: ReportEntry | null): void {
  drawer.replaceChildren();
  if (!entry) {
    drawer.textContent = "Click a frontier point to inspect it.";
    return;
  }
  const dl = document.createElement("dl");
  for (const [term, value] of entryRows(entry)) {
    const dt = document.createElement("dt");
    dt.textContent = term;
    const dd = document.createElement("dd");
    dd.textContent = value;
    dl.append(dt, dd);
  }
  drawer.appendChild(dl);
}

function renderDiagnostics(state: ReturnType<typeof store.getState>): void {
  diagPanel.replaceChildren();
  if (state.status !== "empty") {
    diagPanel.hidden = true;
    return;
  }
  diagPanel.hidden = false;
  const head = document.createElement("p");
  head.textContent = "No configuration meets the objectives. Nearest miss:";
  diagPanel.appendChild(head);
  const d = state.diagnostics;
  if (d) {
    const dl = document.createElement("dl");
    const rows: [string, string][] = [
      ["config", `${d.mode} ${d.config}`],
      ["TTFT", `${fmt(d.ttft_ms)} ms`],
      ["speed", `${fmt(d.speed)} tok/s/user`],
      ["violation factor", d.violation_factor === null ? "∞" : fmt(d.violation_factor)],
    ];
    for (const [term, value] of rows) {
      const dt = document.createElement("dt");
      dt.textContent = term;
      const dd = document.createElement("dd");
      dd.textContent = value;
      dl.append(dt, dd);
    }
    diagPanel.appendChild(dl);
  }
  if (state.counts) {
    const p = document.createElement("p");
    p.textContent = `${state.counts.evaluated} configurations evaluated, 0 feasible.`;
    diagPanel.appendChild(p);
  }
}

function download(filename: string, bytes: string): void {
  // the blob holds the service's bytes untouched
  const blob = new Blob([bytes], { type: "application/yaml" });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}

store.subscribe((state) => {
  const { status, report } = state;
  if (status === "loading") {
    statusLine.textContent = "searching…";
  } else if (status === "ready" && report) {
    statusLine.textContent =
      `${report.counts.feasible} feasible of ${report.counts.evaluated} evaluated in ` +
      `${report.timing.total_ms.toFixed(0)} ms ` +
      `(median ${report.timing.per_candidate_median_ms.toFixed(2)} ms/candidate)`;
  } else if (status === "empty") {
    statusLine.textContent = "no feasible configuration";
  } else if (status === "error") {
    statusLine.textContent = `error: ${state.error}`;
  } else {
    statusLine.textContent = "";
  }

  if (report) {
    chartSvg.style.display = "";
    const box = chartSvg.getBoundingClientRect();
    const scene = buildScene(report, box.width || 720, box.height || 440, state.selected);
    renderChart(chartSvg, scene, (i) => store.select(i));
  } else {
    chartSvg.style.display = "none";
    chartSvg.replaceChildren();
  }
  renderDiagnostics(state);
  renderDrawer(store.selectedEntry());
  exportBtn.disabled = store.selectedEntry() === null;
});

exportBtn.addEventListener("click", () => {
  void store.exportSelection(backendSelect.value || null).then(
    (result) => {
      if (result) download(result.filename, result.bytes);
    },
    (e: Error) => {
      statusLine.textContent = `export failed: ${e.message}`;
    },
  );
});

bindNumeric("isl", "isl");
bindNumeric("osl", "osl");
bindNumeric("ttft-limit", "ttftLimit", true);
bindNumeric("min-speed", "minSpeed", true);
bindNumeric("gpu-budget", "gpuBudget", true);
bindMode("mode-static", "static");
bindMode("mode-aggregated", "aggregated");
bindMode("mode-disaggregated", "disaggregated");

dbSelect.addEventListener("change", () =>
  store.setContext(dbSelect.value, modelSelect.value));
modelSelect.addEventListener("change", () =>
  store.setContext(dbSelect.value, modelSelect.value));

api.fetchMeta().then(
  (meta: Meta) => {
    fillSelect(dbSelect, meta.databases.map((d) => d.name));
    fillSelect(modelSelect, meta.models.map((m) => m.name));
    fillSelect(backendSelect, meta.backends);
    if (meta.databases.length && meta.models.length) {
      store.setContext(meta.databases[0].name, meta.models[0].name);
    } else {
      statusLine.textContent = "service has no databases configured";
    }
  },
  (e: Error) => {
    statusLine.textContent = `cannot reach the service: ${e.message}`;
  },
);
