/**
 * Scene layout checks against the captured service response: the star sits on
 * the response's own best entry, series are split by mode, every point lands
 * inside the axes, and the SLA floor is where the workload says it is.
 */

import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";

import { SearchReport } from "../src/api.js";
import { MARGIN, buildScene } from "../src/chart.js";
import { bestIndex } from "../src/state.js";

const REPORT: SearchReport = JSON.parse(
  readFileSync(new URL("./fixtures/search-response.json", import.meta.url), "utf-8"),
);

const W = 720;
const H = 440;

describe("buildScene", () => {
  it("stars exactly the entry the service marked best", () => {
    const scene = buildScene(REPORT, W, H, null);
    const starred = scene.points.filter((p) => p.starred);
    expect(starred.length).toBe(1);
    expect(starred[0].mode).toBe(REPORT.best!.mode);
    expect(starred[0].config).toBe(REPORT.best!.config);
    expect(starred[0].index).toBe(bestIndex(REPORT));
  });

  it("keeps the serving modes as distinguishable series", () => {
    const scene = buildScene(REPORT, W, H, null);
    expect(scene.modes).toEqual(["static", "aggregated", "disaggregated"]);
    for (const mode of scene.modes) {
      expect(scene.points.some((p) => p.mode === mode)).toBe(true);
    }
  });

  it("every frontier point lands inside the plotting area", () => {
    const scene = buildScene(REPORT, W, H, null);
    expect(scene.points.length).toBe(REPORT.frontier.length);
    for (const p of scene.points) {
      expect(p.x).toBeGreaterThanOrEqual(MARGIN.left);
      expect(p.x).toBeLessThanOrEqual(W - MARGIN.right);
      expect(p.y).toBeGreaterThanOrEqual(MARGIN.top);
      expect(p.y).toBeLessThanOrEqual(H - MARGIN.bottom);
    }
  });

  it("positions respect the response ordering of speed and throughput", () => {
    const scene = buildScene(REPORT, W, H, null);
    // frontier is sorted by descending throughput; speed rises as it falls
    for (let i = 1; i < scene.points.length; i++) {
      const prev = REPORT.frontier[i - 1];
      const cur = REPORT.frontier[i];
      if (prev.speed !== null && cur.speed !== null && prev.speed < cur.speed) {
        expect(scene.points[i].x).toBeGreaterThan(scene.points[i - 1].x);
      }
      if (prev.throughput_per_gpu < cur.throughput_per_gpu) {
        expect(scene.points[i].y).toBeLessThan(scene.points[i - 1].y);
      }
    }
  });

  it("places the SLA floor at the workload's min_speed", () => {
    const scene = buildScene(REPORT, W, H, null);
    expect(scene.slaFloorPx).not.toBeNull();
    // invert the x scale through the ticks: floor must sit left of every point
    // (fixture speeds all exceed the 5 tok/s floor)
    for (const p of scene.points) {
      expect(p.x).toBeGreaterThan(scene.slaFloorPx!);
    }
  });

  it("omits the floor when the workload has none", () => {
    const workload = { ...REPORT.workload };
    delete (workload as Record<string, unknown>).min_speed;
    const scene = buildScene({ ...REPORT, workload }, W, H, null);
    expect(scene.slaFloorPx).toBeNull();
  });

  it("pins unbounded-speed entries to the right edge instead of dropping them", () => {
    const frontier = REPORT.frontier.map((e, i) => (i === 0 ? { ...e, speed: null } : e));
    const scene = buildScene({ ...REPORT, frontier }, W, H, null);
    expect(scene.points[0].clamped).toBe(true);
    expect(scene.points[0].x).toBe(W - MARGIN.right);
    expect(scene.points.length).toBe(frontier.length);
  });

  it("marks the selected index and nothing else", () => {
    const scene = buildScene(REPORT, W, H, 2);
    expect(scene.points.filter((p) => p.selected).map((p) => p.index)).toEqual([2]);
  });
});
