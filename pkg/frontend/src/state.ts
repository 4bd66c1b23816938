// Pure view-state derivation: the console is a function of the latest
// service responses plus local form state, nothing else. Reloading and
// refetching must reconstruct the identical view.

import type { CandidateOut, HistoryResponse, PendingPoint } from "./api.js";

export interface ScatterPoint {
  coords: number[]; // first 2-3 normalized dims
  fidelity: "real" | "llm";
}

export interface CampaignView {
  id: string;
  status: string;
  taskName: string;
  tau: number;
  budget: { realUsed: number; realTotal: number; llmUsed: number };
  bestSoFar: number | null;
  bestX: number[] | null;
  convergence: number[];
  rhoSeries: number[];
  scatter: ScatterPoint[];
  scatterDims: string[];
  pending: PendingPoint[];
  candidates: CandidateOut[];
  dimNames: string[];
  outputRange: { y_min: number; y_max: number };
  finishReason: string | null;
}

export function normalizeCoord(value: number, lower: number, upper: number): number {
  return (value - lower) / (upper - lower);
}

export function buildView(
  history: HistoryResponse,
  latestCandidates: CandidateOut[] = [],
): CampaignView {
  const dims = history.task.dims;
  const shown = Math.min(dims.length, 3);
  const toScatter = (obs: { x: number[] }, fidelity: "real" | "llm"): ScatterPoint => ({
    coords: obs.x.slice(0, shown).map((v, i) => normalizeCoord(v, dims[i].lower, dims[i].upper)),
    fidelity,
  });
  const scatter = [
    ...history.observations.llm.map((o) => toScatter(o, "llm")),
    ...history.observations.real.map((o) => toScatter(o, "real")),
  ];
  return {
    id: history.id,
    status: history.status,
    taskName: history.task.name,
    tau: history.tau,
    budget: {
      realUsed: history.budget.real_used,
      realTotal: history.budget.real_total,
      llmUsed: history.budget.llm_used,
    },
    bestSoFar: history.best_so_far,
    bestX: history.best_x,
    convergence: history.convergence,
    rhoSeries: history.rho_series.map((r) => r.rho),
    scatter,
    scatterDims: dims.slice(0, shown).map((d) => d.name),
    pending: history.pending,
    candidates: latestCandidates,
    dimNames: dims.map((d) => d.name),
    outputRange: history.task.output_range,
    finishReason: history.finish_reason,
  };
}

export function assertNondecreasing(series: number[]): boolean {
  for (let i = 1; i < series.length; i++) {
    if (series[i] < series[i - 1]) return false;
  }
  return true;
}

export type EntryValidation =
  | { ok: true; value: number; outsideRange: boolean }
  | { ok: false; message: string };

// Real measurements may legitimately exceed the declared output range
// (they are stored unclipped); outside-range values only soft-warn.
export function validateMeasurement(
  raw: string,
  range: { y_min: number; y_max: number },
): EntryValidation {
  const trimmed = raw.trim();
  if (trimmed === "") return { ok: false, message: "enter a measured value" };
  const value = Number(trimmed);
  if (!Number.isFinite(value)) {
    return { ok: false, message: `"${raw}" is not a number` };
  }
  const outsideRange = value < range.y_min || value > range.y_max;
  return { ok: true, value, outsideRange };
}

export function matchesPending(pending: PendingPoint[], x: number[]): boolean {
  return pending.some(
    (p) => p.x.length === x.length && p.x.every((v, i) => Math.abs(v - x[i]) <= 1e-9),
  );
}
