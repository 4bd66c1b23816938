// DOM rendering. Every render is a full rebuild from the view object, so
// the page is always reconstructible from the service responses alone.

import type { CandidateOut } from "./api.js";
import { convergenceChart, fidelityScatter, sparkline } from "./charts.js";
import type { CampaignView } from "./state.js";

export interface Handlers {
  onSuggest: () => void;
  onTell: (entries: { x: number[]; raw: string }[]) => void;
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(v: number | null | undefined, digits = 4): string {
  if (v === null || v === undefined) return "-";
  return v.toFixed(digits);
}

function gauge(label: string, used: number, total: number | null): HTMLElement {
  const wrap = el("div", "gauge");
  wrap.appendChild(el("span", "gauge-label", label));
  const text = total === null ? `${used}` : `${used} / ${total}`;
  wrap.appendChild(el("span", "gauge-value", text));
  if (total !== null && total > 0) {
    const bar = el("div", "gauge-bar");
    const fill = el("div", "gauge-fill");
    fill.style.width = `${Math.min(100, (100 * used) / total).toFixed(0)}%`;
    bar.appendChild(fill);
    wrap.appendChild(bar);
  }
  return wrap;
}

function candidateCard(c: CandidateOut, view: CampaignView): HTMLElement {
  const needsExperiment = c.gate === "needs_experiment";
  const card = el("div", `candidate-card ${needsExperiment ? "card-real" : "card-llm"}`);
  const badgeText = needsExperiment
    ? "experiment required"
    : c.gate === "dropped"
      ? "dropped"
      : "LLM accepted";
  const badge = el("span", `gate-badge ${needsExperiment ? "badge-red" : "badge-green"}`, badgeText);
  card.appendChild(badge);
  const features = el("ul", "features");
  c.x.forEach((v, i) => {
    features.appendChild(el("li", "feature", `${view.dimNames[i]}: ${fmt(v)}`));
  });
  card.appendChild(features);
  card.appendChild(el("div", "y-llm", `y_llm: ${fmt(c.y_llm)}`));
  card.appendChild(
    el("div", "p-delta", `p_delta: ${fmt(c.p_delta, 3)} vs tau ${view.tau.toFixed(2)}`),
  );
  if (c.y_real !== null) card.appendChild(el("div", "y-real", `measured: ${fmt(c.y_real)}`));
  if (c.budget_denied) card.appendChild(el("div", "budget-denied", "budget exhausted: not run"));
  return card;
}

export function render(root: HTMLElement, view: CampaignView, handlers: Handlers, inFlight: boolean): void {
  root.textContent = "";
  const header = el("div", "header");
  header.appendChild(el("h1", "title", `${view.taskName} - campaign ${view.id}`));
  header.appendChild(el("span", `status status-${view.status}`, view.status));
  if (view.finishReason) header.appendChild(el("span", "finish-reason", view.finishReason));
  root.appendChild(header);

  const gauges = el("div", "gauges");
  gauges.appendChild(gauge("real budget", view.budget.realUsed, view.budget.realTotal));
  gauges.appendChild(gauge("llm queries", view.budget.llmUsed, null));
  root.appendChild(gauges);

  const best = el("div", "best-so-far");
  best.dataset.value = view.bestSoFar === null ? "" : String(view.bestSoFar);
  best.textContent = `best so far: ${fmt(view.bestSoFar)}`;
  root.appendChild(best);

  const charts = el("div", "charts");
  const conv = el("div", "chart-block");
  conv.appendChild(el("h2", undefined, "convergence (best real y per query)"));
  conv.appendChild(convergenceChart(view.convergence));
  charts.appendChild(conv);
  const rho = el("div", "chart-block");
  rho.appendChild(el("h2", undefined, "rho trajectory"));
  rho.appendChild(sparkline(view.rhoSeries));
  charts.appendChild(rho);
  const scatter = el("div", "chart-block");
  scatter.appendChild(el("h2", undefined, "fidelity allocation"));
  scatter.appendChild(fidelityScatter(view.scatter, view.scatterDims));
  charts.appendChild(scatter);
  root.appendChild(charts);

  const actions = el("div", "actions");
  const suggestBtn = el("button", "suggest-btn", "suggest next batch") as HTMLButtonElement;
  suggestBtn.disabled = inFlight || view.status !== "awaiting_suggest";
  suggestBtn.addEventListener("click", () => handlers.onSuggest());
  actions.appendChild(suggestBtn);
  root.appendChild(actions);

  if (view.candidates.length > 0) {
    const cands = el("div", "candidates");
    cands.appendChild(el("h2", undefined, "latest batch"));
    for (const c of view.candidates) cands.appendChild(candidateCard(c, view));
    root.appendChild(cands);
  }

  if (view.pending.length > 0) {
    const form = el("form", "tell-form") as HTMLFormElement;
    form.appendChild(el("h2", undefined, "pending experiments"));
    view.pending.forEach((p, idx) => {
      const row = el("div", "tell-row");
      row.appendChild(
        el(
          "label",
          "tell-label",
          p.x.map((v, i) => `${view.dimNames[i]}=${fmt(v)}`).join(", "),
        ),
      );
      const input = el("input", "tell-input") as HTMLInputElement;
      input.name = `measurement-${idx}`;
      input.setAttribute("data-x", JSON.stringify(p.x));
      input.placeholder = `measured ${fmt(view.outputRange.y_min, 1)}..${fmt(view.outputRange.y_max, 1)}`;
      row.appendChild(input);
      row.appendChild(el("span", "tell-error"));
      form.appendChild(row);
    });
    const submit = el("button", "tell-submit", "record measurements") as HTMLButtonElement;
    submit.type = "submit";
    submit.disabled = inFlight;
    form.appendChild(submit);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const entries: { x: number[]; raw: string }[] = [];
      form.querySelectorAll<HTMLInputElement>("input.tell-input").forEach((input) => {
        entries.push({ x: JSON.parse(input.getAttribute("data-x") ?? "[]"), raw: input.value });
      });
      handlers.onTell(entries);
    });
    root.appendChild(form);
  }
}

export function renderError(root: HTMLElement, message: string): void {
  let banner = root.querySelector<HTMLElement>(".error-banner");
  if (!banner) {
    banner = el("div", "error-banner");
    root.prepend(banner);
  }
  banner.textContent = message;
}
