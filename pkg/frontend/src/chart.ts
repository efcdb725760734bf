/**
 * Frontier chart: x = per-user speed (tokens/s), y = throughput per GPU.
 *
 * Scene computation is pure (data in, pixel positions out) so the layout is
 * testable without a DOM; rendering is a thin SVG writer over the scene.
 */

import { ReportEntry, SearchReport } from "./api.js";

export const MARGIN = { top: 16, right: 24, bottom: 44, left: 64 };

export const MODE_COLORS: Record<string, string> = {
  static: "#8a6d3b",
  aggregated: "#2c7fb8",
  disaggregated: "#d95f02",
};

export interface ScenePoint {
  index: number; // position in report.frontier
  x: number;
  y: number;
  mode: string;
  config: string;
  starred: boolean;
  selected: boolean;
  /** speed was null (unbounded); pinned to the right edge */
  clamped: boolean;
}

export interface SceneTick {
  value: number;
  px: number;
}

export interface Scene {
  width: number;
  height: number;
  points: ScenePoint[];
  modes: string[]; // in legend order
  xTicks: SceneTick[];
  yTicks: SceneTick[];
  /** Pixel x of the min_speed floor; the region to its right meets the SLA. */
  slaFloorPx: number | null;
}

function niceTicks(lo: number, hi: number, target = 5): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step0 = Math.pow(10, Math.floor(Math.log10(span / target)));
  const err = span / target / step0;
  const step = step0 * (err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1);
  const ticks: number[] = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + step / 1e6; v += step) {
    ticks.push(Math.round(v / step) * step);
  }
  return ticks;
}

function pad(lo: number, hi: number): [number, number] {
  if (lo === hi) return [lo * 0.9, hi * 1.1 || 1];
  const slack = (hi - lo) * 0.08;
  return [Math.max(0, lo - slack), hi + slack];
}

export function buildScene(
  report: SearchReport,
  width: number,
  height: number,
  selected: number | null,
): Scene {
  const inner = {
    w: width - MARGIN.left - MARGIN.right,
    h: height - MARGIN.top - MARGIN.bottom,
  };
  const entries = report.frontier;
  const speeds = entries.map((e) => e.speed).filter((s): s is number => s !== null);
  const minSpeed = typeof report.workload.min_speed === "number" ? report.workload.min_speed : null;

  let [x0, x1] = pad(Math.min(...speeds, minSpeed ?? Infinity), Math.max(...speeds, 0));
  if (speeds.length === 0) [x0, x1] = [0, 1]; // every speed unbounded
  const [y0, y1] = pad(
    Math.min(...entries.map((e) => e.throughput_per_gpu)),
    Math.max(...entries.map((e) => e.throughput_per_gpu)),
  );

  const sx = (v: number) => MARGIN.left + ((v - x0) / (x1 - x0)) * inner.w;
  const sy = (v: number) => MARGIN.top + inner.h - ((v - y0) / (y1 - y0)) * inner.h;

  const best = report.best;
  const isBest = (e: ReportEntry) =>
    best !== null && e.mode === best.mode && e.config === best.config;

  const points = entries.map((e, index) => ({
    index,
    x: e.speed === null ? MARGIN.left + inner.w : sx(e.speed),
    y: sy(e.throughput_per_gpu),
    mode: e.mode,
    config: e.config,
    starred: isBest(e),
    selected: index === selected,
    clamped: e.speed === null,
  }));

  const modeOrder = ["static", "aggregated", "disaggregated"];
  const present = new Set(entries.map((e) => e.mode));
  return {
    width,
    height,
    points,
    modes: modeOrder.filter((m) => present.has(m)),
    xTicks: niceTicks(x0, x1).map((value) => ({ value, px: sx(value) })),
    yTicks: niceTicks(y0, y1).map((value) => ({ value, px: sy(value) })),
    slaFloorPx: minSpeed !== null && minSpeed >= x0 && minSpeed <= x1 ? sx(minSpeed) : null,
  };
}

const SVG_NS = "http://www.w3.org/2000/svg";

function el(name: string, attrs: Record<string, string | number>): SVGElement {
  const node = document.createElementNS(SVG_NS, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, String(v));
  return node;
}

function starPath(cx: number, cy: number, r: number): string {
  // five-pointed star, outer radius r
  const parts: string[] = [];
  for (let i = 0; i < 10; i++) {
    const radius = i % 2 === 0 ? r : r * 0.45;
    const a = -Math.PI / 2 + (i * Math.PI) / 5;
    parts.push(`${i === 0 ? "M" : "L"}${cx + radius * Math.cos(a)},${cy + radius * Math.sin(a)}`);
  }
  return parts.join("") + "Z";
}

export function renderChart(
  svg: SVGSVGElement,
  scene: Scene,
  onPick: (index: number) => void,
): void {
  svg.replaceChildren();
  svg.setAttribute("viewBox", `0 0 ${scene.width} ${scene.height}`);
  const innerRight = scene.width - MARGIN.right;
  const innerBottom = scene.height - MARGIN.bottom;

  if (scene.slaFloorPx !== null) {
    svg.appendChild(el("rect", {
      x: scene.slaFloorPx, y: MARGIN.top,
      width: Math.max(0, innerRight - scene.slaFloorPx),
      height: innerBottom - MARGIN.top,
      class: "sla-region",
    }));
    svg.appendChild(el("line", {
      x1: scene.slaFloorPx, x2: scene.slaFloorPx,
      y1: MARGIN.top, y2: innerBottom, class: "sla-floor",
    }));
  }

  for (const t of scene.xTicks) {
    svg.appendChild(el("line", {
      x1: t.px, x2: t.px, y1: MARGIN.top, y2: innerBottom, class: "grid",
    }));
    const label = el("text", { x: t.px, y: innerBottom + 16, class: "tick" });
    label.textContent = String(t.value);
    svg.appendChild(label);
  }
  for (const t of scene.yTicks) {
    svg.appendChild(el("line", {
      x1: MARGIN.left, x2: innerRight, y1: t.px, y2: t.px, class: "grid",
    }));
    const label = el("text", { x: MARGIN.left - 8, y: t.px + 4, class: "tick tick-y" });
    label.textContent = String(t.value);
    svg.appendChild(label);
  }

  const xTitle = el("text", {
    x: (MARGIN.left + innerRight) / 2, y: scene.height - 6, class: "axis-title",
  });
  xTitle.textContent = "speed (tokens/s per user)";
  svg.appendChild(xTitle);
  const yTitle = el("text", {
    x: 14, y: (MARGIN.top + innerBottom) / 2, class: "axis-title",
    transform: `rotate(-90 14 ${(MARGIN.top + innerBottom) / 2})`,
  });
  yTitle.textContent = "throughput (tokens/s per GPU)";
  svg.appendChild(yTitle);

  for (const p of scene.points) {
    const color = MODE_COLORS[p.mode] ?? "#666";
    const dot = el("circle", {
      cx: p.x, cy: p.y, r: p.selected ? 7 : 5,
      fill: color, class: `point${p.selected ? " selected" : ""}`,
    });
    if (p.clamped) dot.setAttribute("stroke-dasharray", "2,2");
    dot.addEventListener("click", () => onPick(p.index));
    const tip = document.createElementNS(SVG_NS, "title");
    tip.textContent = `${p.mode} ${p.config}${p.clamped ? " (speed unbounded)" : ""}`;
    dot.appendChild(tip);
    svg.appendChild(dot);
    if (p.starred) {
      const star = el("path", { d: starPath(p.x, p.y - 14, 8), class: "star" });
      svg.appendChild(star);
    }
  }
}
