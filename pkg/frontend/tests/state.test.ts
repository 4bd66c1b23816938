import { describe, expect, it } from "vitest";

import type { HistoryResponse } from "../src/api.js";
import {
  assertNondecreasing,
  buildView,
  matchesPending,
  normalizeCoord,
  validateMeasurement,
} from "../src/state.js";

function history(overrides: Partial<HistoryResponse> = {}): HistoryResponse {
  return {
    id: "c1",
    status: "awaiting_suggest",
    task: {
      name: "t",
      dims: [
        { name: "a", lower: 0, upper: 10 },
        { name: "b", lower: 100, upper: 200 },
        { name: "c", lower: 0, upper: 1 },
        { name: "d", lower: 0, upper: 1 },
      ],
      output_range: { y_min: 0, y_max: 1 },
    },
    tau: 0.75,
    budget: { real_used: 2, real_total: 10, llm_used: 7 },
    observations: {
      real: [{ x: [5, 150, 0.5, 0.5], y: 0.4, fidelity: "real", iteration: 0, origin: "human_tell" }],
      llm: [{ x: [2.5, 125, 0.2, 0.9], y: 0.3, fidelity: "llm", iteration: 0, origin: "warm_start_lhs" }],
    },
    gate_records: [],
    convergence: [0.4],
    rho_series: [{ iteration: 1, rho: 0.9 }],
    best_so_far: 0.4,
    best_x: [5, 150, 0.5, 0.5],
    pending: [],
    finish_reason: null,
  };
}

describe("view derivation", () => {
  it("normalizes scatter coordinates to the unit cube, first three dims", () => {
    const view = buildView(history());
    expect(view.scatter.length).toBe(2);
    const llmPoint = view.scatter.find((p) => p.fidelity === "llm")!;
    expect(llmPoint.coords).toEqual([0.25, 0.25, 0.2]);
    expect(view.scatterDims).toEqual(["a", "b", "c"]);
  });

  it("carries the budget gauges through", () => {
    const view = buildView(history());
    expect(view.budget).toEqual({ realUsed: 2, realTotal: 10, llmUsed: 7 });
  });

  it("convergence from the service is nondecreasing", () => {
    expect(assertNondecreasing([0.1, 0.3, 0.3, 0.9])).toBe(true);
    expect(assertNondecreasing([0.1, 0.05])).toBe(false);
  });
});

describe("coordinate helpers", () => {
  it("normalizeCoord is affine on the declared bounds", () => {
    expect(normalizeCoord(3, 3, 31)).toBe(0);
    expect(normalizeCoord(31, 3, 31)).toBe(1);
    expect(normalizeCoord(17, 3, 31)).toBeCloseTo(0.5, 12);
  });

  it("matchesPending uses the raw-units tolerance", () => {
    const pending = [{ x: [1.0, 2.0] }];
    expect(matchesPending(pending, [1.0, 2.0])).toBe(true);
    expect(matchesPending(pending, [1.0 + 5e-10, 2.0])).toBe(true);
    expect(matchesPending(pending, [1.1, 2.0])).toBe(false);
  });
});

describe("measurement validation", () => {
  const range = { y_min: 0, y_max: 1 };

  it("accepts numerics inside the range", () => {
    const v = validateMeasurement("0.42", range);
    expect(v).toEqual({ ok: true, value: 0.42, outsideRange: false });
  });

  it("flags values outside the range without rejecting them", () => {
    const v = validateMeasurement("1.7", range);
    expect(v).toEqual({ ok: true, value: 1.7, outsideRange: true });
  });

  it("rejects non-numeric and empty entries", () => {
    expect(validateMeasurement("high", range).ok).toBe(false);
    expect(validateMeasurement("", range).ok).toBe(false);
    expect(validateMeasurement("NaN", range).ok).toBe(false);
  });
});
