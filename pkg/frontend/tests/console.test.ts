// Scripted operator-loop test: create a campaign with a manual real
// oracle, run suggest, see exactly one "experiment required" card, record
// a measured value, and watch the convergence chart extend. A mid-flow
// reload must reconstruct the identical view from the service alone.

import { beforeEach, describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api.js";
import { ConsoleApp } from "../src/main.js";
import { FakeService } from "./fake-service.js";

const CREATE_BODY = {
  task: {
    name: "bench-demo",
    dims: [
      { name: "reaction_time", lower: 3, upper: 31 },
      { name: "temperature", lower: 100, upper: 150 },
    ],
    output_range: { y_min: 0, y_max: 1 },
  },
  config: { budget: 8, n_init_real: 2, n_warmup_llm: 4, seed: 1 },
  oracle: { llm_endpoint: "synthetic:random", auto_real_oracle: "none" },
};

function makeRoot(): HTMLElement {
  const root = document.createElement("div");
  document.body.appendChild(root);
  return root;
}

async function createApp(service: FakeService, root: HTMLElement) {
  const client = new ServiceClient("http://svc", undefined, service.fetch);
  const created = await client.createCampaign(CREATE_BODY as any);
  const app = new ConsoleApp(root, client, created.campaign_id, {
    confirmFn: () => true,
  });
  await app.refresh();
  return { app, client, created };
}

async function tellPending(root: HTMLElement, values: number[]): Promise<void> {
  const inputs = root.querySelectorAll<HTMLInputElement>("input.tell-input");
  expect(inputs.length).toBe(values.length);
  inputs.forEach((input, i) => {
    input.value = String(values[i]);
  });
  const form = root.querySelector<HTMLFormElement>("form.tell-form")!;
  form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
  // let the async tell -> refresh settle
  await new Promise((r) => setTimeout(r, 0));
  await new Promise((r) => setTimeout(r, 0));
}

describe("operator console loop", () => {
  let service: FakeService;
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "";
    service = new FakeService();
    root = makeRoot();
  });

  it("runs the full human-in-the-loop cycle", async () => {
    const { app } = await createApp(service, root);

    // fresh manual campaign: initial design pending, suggest disabled
    expect(root.querySelector(".status")!.textContent).toBe("awaiting_observations");
    const suggestBtn = root.querySelector<HTMLButtonElement>("button.suggest-btn")!;
    expect(suggestBtn.disabled).toBe(true);
    expect(root.querySelectorAll("input.tell-input").length).toBe(2);

    // record the initial measurements
    await tellPending(root, [0.42, 0.55]);
    await app.refresh();
    expect(root.querySelector(".status")!.textContent).toBe("awaiting_suggest");
    let chart = root.querySelector<SVGSVGElement>("svg.convergence-chart")!;
    expect(chart.getAttribute("data-points")).toBe("2");
    expect(root.querySelector(".best-so-far")!.textContent).toContain("0.5500");

    // suggest: one candidate is LLM-accepted, one needs an experiment
    await app.suggest();
    const cards = root.querySelectorAll(".candidate-card");
    expect(cards.length).toBe(2);
    const badges = [...root.querySelectorAll(".gate-badge")].map((b) => b.textContent);
    expect(badges.filter((b) => b === "experiment required").length).toBe(1);
    expect(badges.filter((b) => b === "LLM accepted").length).toBe(1);
    // exactly one entry form for the gated candidate
    expect(root.querySelectorAll("input.tell-input").length).toBe(1);
    // each candidate card shows its gate evidence
    expect(root.querySelector(".p-delta")!.textContent).toContain("vs tau 0.75");

    // measure it: the chart extends and best-so-far updates
    await tellPending(root, [0.91]);
    await app.refresh();
    chart = root.querySelector<SVGSVGElement>("svg.convergence-chart")!;
    expect(chart.getAttribute("data-points")).toBe("3");
    expect(root.querySelector(".best-so-far")!.textContent).toContain("0.9100");
    expect(root.querySelector(".status")!.textContent).toBe("awaiting_suggest");
  });

  it("reload mid-flow reconstructs the identical view", async () => {
    const { app, client, created } = await createApp(service, root);
    await tellPending(root, [0.42, 0.55]);
    await app.suggest();

    // a "new tab" over the same campaign: fresh root, fresh app instance.
    // candidate cards come from the suggest response, which a reload cannot
    // replay, so compare everything the history endpoint feeds.
    const root2 = makeRoot();
    const app2 = new ConsoleApp(root2, client, created.campaign_id, {
      confirmFn: () => true,
    });
    await app2.refresh();
    await app.refresh(); // re-render original from the same history
    const strip = (html: string) => html.replace(/\s+/g, " ");
    const without = (el: HTMLElement) => {
      const clone = el.cloneNode(true) as HTMLElement;
      clone.querySelectorAll(".candidates").forEach((n) => n.remove());
      return strip(clone.innerHTML);
    };
    expect(without(root2)).toBe(without(root));

    // the reconstructed tab is fully operational: tell works from it
    await tellPending(root2, [0.93]);
    expect(root2.querySelector(".best-so-far")!.textContent).toContain("0.9300");
  });

  it("polling refreshes the dashboard without user action", async () => {
    const { app, client, created } = await createApp(service, root);
    app.startPolling();
    // another operator records the pending measurements out-of-band
    const pending = service.campaigns.get(created.campaign_id)!.pending.map((p) => p.x);
    await client.tell(
      created.campaign_id,
      pending.map((x, i) => ({ x, y: 0.3 + 0.1 * i })),
    );
    await new Promise((r) => setTimeout(r, 5));
    await app.refresh();
    app.stopPolling();
    expect(root.querySelector(".status")!.textContent).toBe("awaiting_suggest");
  });
});

describe("tell validation", () => {
  let service: FakeService;
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "";
    service = new FakeService();
    root = makeRoot();
  });

  it("rejects non-numeric entries client-side", async () => {
    await createApp(service, root);
    const before = service.campaigns.values().next().value!.realUsed;
    await tellPending(root, ["not-a-number" as unknown as number, 0.5]);
    expect(root.querySelector(".error-banner")!.textContent).toContain("not a number");
    const after = service.campaigns.values().next().value!.realUsed;
    expect(after).toBe(before); // no request was sent
  });

  it("soft-warns outside the output range and records on confirm", async () => {
    const client = new ServiceClient("http://svc", undefined, service.fetch);
    const created = await client.createCampaign(CREATE_BODY as any);
    const prompts: string[] = [];
    const app = new ConsoleApp(root, client, created.campaign_id, {
      confirmFn: (m) => {
        prompts.push(m);
        return true;
      },
    });
    await app.refresh();
    await tellPending(root, [4.2, 0.5]); // 4.2 above y_max = 1
    expect(prompts.length).toBe(1);
    expect(prompts[0]).toContain("outside the declared range");
    // the unclipped measurement went through
    expect(root.querySelector(".best-so-far")!.textContent).toContain("4.2000");
  });

  it("declined confirm sends nothing", async () => {
    const client = new ServiceClient("http://svc", undefined, service.fetch);
    const created = await client.createCampaign(CREATE_BODY as any);
    const app = new ConsoleApp(root, client, created.campaign_id, {
      confirmFn: () => false,
    });
    await app.refresh();
    await tellPending(root, [4.2, 0.5]);
    expect(service.campaigns.get(created.campaign_id)!.realUsed).toBe(0);
  });
});

describe("failure rendering", () => {
  it("invalid-state suggest renders the explanation", async () => {
    document.body.innerHTML = "";
    const service = new FakeService();
    const root = makeRoot();
    const { app } = await createApp(service, root);
    await app.suggest(); // manual init still pending -> 409
    expect(root.querySelector(".error-banner")!.textContent).toContain("InvalidState");
  });
});
