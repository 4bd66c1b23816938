// App controller: one campaign, one root element, a 2-second poll, and a
// single in-flight mutating request at a time. All rendered content comes
// from the history endpoint plus the latest suggest response.

import { CandidateOut, ServiceClient, ServiceError } from "./api.js";
import { render, renderError } from "./render.js";
import { buildView, validateMeasurement } from "./state.js";

export interface AppOptions {
  pollMs?: number;
  confirmFn?: (message: string) => boolean;
}

export class ConsoleApp {
  private latestCandidates: CandidateOut[] = [];
  private inFlight = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private root: HTMLElement,
    private client: ServiceClient,
    private campaignId: string,
    private options: AppOptions = {},
  ) {}

  async refresh(): Promise<void> {
    try {
      const history = await this.client.history(this.campaignId);
      const view = buildView(history, this.latestCandidates);
      render(this.root, view, { onSuggest: () => this.suggest(), onTell: (e) => this.tell(e) }, this.inFlight);
    } catch (err) {
      renderError(this.root, this.describe(err));
    }
  }

  startPolling(): void {
    const ms = this.options.pollMs ?? 2000;
    this.timer = setInterval(() => void this.refresh(), ms);
  }

  stopPolling(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async suggest(): Promise<void> {
    if (this.inFlight) return; // double-click guard
    this.inFlight = true;
    await this.refresh();
    let failure: string | null = null;
    try {
      const out = await this.client.suggest(this.campaignId);
      this.latestCandidates = out.candidates;
    } catch (err) {
      failure = this.describe(err);
    } finally {
      this.inFlight = false;
      await this.refresh();
      if (failure) renderError(this.root, failure);
    }
  }

  async tell(entries: { x: number[]; raw: string }[]): Promise<void> {
    if (this.inFlight) return;
    const history = await this.client.history(this.campaignId);
    const range = history.task.output_range;
    const confirmFn = this.options.confirmFn ?? ((m: string) => window.confirm(m));
    const observations: { x: number[]; y: number }[] = [];
    for (const entry of entries) {
      const check = validateMeasurement(entry.raw, range);
      if (!check.ok) {
        renderError(this.root, `invalid measurement: ${check.message}`);
        return; // no request leaves the page on invalid input
      }
      if (check.outsideRange) {
        const proceed = confirmFn(
          `${check.value} lies outside the declared range ` +
            `[${range.y_min}, ${range.y_max}]. Real measurements are stored ` +
            `unclipped - record it anyway?`,
        );
        if (!proceed) return;
      }
      observations.push({ x: entry.x, y: check.value });
    }
    this.inFlight = true;
    let failure: string | null = null;
    try {
      await this.client.tell(this.campaignId, observations);
    } catch (err) {
      failure = this.describe(err);
    } finally {
      this.inFlight = false;
      await this.refresh();
      if (failure) renderError(this.root, failure);
    }
  }

  private describe(err: unknown): string {
    if (err instanceof ServiceError) {
      if (err.body.code === "OracleUnavailable") {
        return "LLM endpoint unavailable - the service will accept a retry shortly";
      }
      return `${err.body.code}: ${err.body.message}`;
    }
    return `service unreachable: ${String(err)} - retrying on next poll`;
  }
}

export async function boot(root: HTMLElement): Promise<ConsoleApp | null> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("service") ?? "http://127.0.0.1:8000";
  const token = params.get("token") ?? undefined;
  const campaign = params.get("campaign");
  if (!campaign) {
    root.textContent = "missing ?campaign=<id> (and optional &service=<base-url>)";
    return null;
  }
  const app = new ConsoleApp(root, new ServiceClient(base, token), campaign);
  await app.refresh();
  app.startPolling();
  return app;
}

declare global {
  interface Window {
    laboConsoleBoot?: typeof boot;
  }
}

if (typeof window !== "undefined") {
  window.laboConsoleBoot = boot;
  const root = typeof document !== "undefined" ? document.getElementById("app") : null;
  if (root) void boot(root);
}
