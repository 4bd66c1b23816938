// Hand-rolled SVG charts: a convergence line, a rho sparkline, and the
// fidelity-allocation scatter. No chart library; the shapes are simple and
// the data always arrives pre-digested from the history endpoint.

import type { ScatterPoint } from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function svgEl<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | number>,
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, String(v));
  return el;
}

function scale(values: number[]): { min: number; span: number } {
  if (values.length === 0) return { min: 0, span: 1 };
  const min = Math.min(...values);
  const max = Math.max(...values);
  return { min, span: max - min || 1 };
}

export function convergenceChart(series: number[], width = 360, height = 140): SVGSVGElement {
  const svg = svgEl("svg", {
    width,
    height,
    class: "chart convergence-chart",
    "data-points": series.length,
  });
  svg.appendChild(
    svgEl("rect", { x: 0, y: 0, width, height, fill: "#fafafa", stroke: "#ddd" }),
  );
  if (series.length > 0) {
    const { min, span } = scale(series);
    const pad = 12;
    const step = series.length > 1 ? (width - 2 * pad) / (series.length - 1) : 0;
    const pts = series
      .map((v, i) => {
        const x = pad + i * step;
        const y = height - pad - ((v - min) / span) * (height - 2 * pad);
        return `${x.toFixed(1)},${y.toFixed(1)}`;
      })
      .join(" ");
    svg.appendChild(
      svgEl("polyline", { points: pts, fill: "none", stroke: "#2a6fdb", "stroke-width": 2 }),
    );
  }
  return svg;
}

export function sparkline(series: number[], width = 160, height = 36): SVGSVGElement {
  const svg = svgEl("svg", { width, height, class: "chart rho-sparkline", "data-points": series.length });
  if (series.length > 0) {
    const { min, span } = scale(series);
    const step = series.length > 1 ? width / (series.length - 1) : 0;
    const pts = series
      .map((v, i) => `${(i * step).toFixed(1)},${(height - 4 - ((v - min) / span) * (height - 8)).toFixed(1)}`)
      .join(" ");
    svg.appendChild(svgEl("polyline", { points: pts, fill: "none", stroke: "#888", "stroke-width": 1.5 }));
  }
  return svg;
}

// Color semantics: cheap-fidelity points are the broad blue background,
// real experiments the concentrated red foreground.
export function fidelityScatter(
  points: ScatterPoint[],
  dimNames: string[],
  width = 220,
  height = 220,
): SVGSVGElement {
  const svg = svgEl("svg", { width, height, class: "chart fidelity-scatter" });
  svg.appendChild(svgEl("rect", { x: 0, y: 0, width, height, fill: "#fafafa", stroke: "#ddd" }));
  const pad = 10;
  for (const p of points) {
    const cx = pad + (p.coords[0] ?? 0.5) * (width - 2 * pad);
    const cy = height - pad - (p.coords[1] ?? 0.5) * (height - 2 * pad);
    const r = p.coords.length > 2 ? 2 + (p.coords[2] ?? 0) * 3 : 3;
    svg.appendChild(
      svgEl("circle", {
        cx: cx.toFixed(1),
        cy: cy.toFixed(1),
        r: r.toFixed(1),
        fill: p.fidelity === "real" ? "#d33" : "#2a6fdb",
        "fill-opacity": p.fidelity === "real" ? 0.9 : 0.45,
        class: `scatter-${p.fidelity}`,
      }),
    );
  }
  const legend = svgEl("text", { x: pad, y: 12, "font-size": 10, fill: "#444" });
  legend.textContent =
    `${dimNames.slice(0, 2).join(" / ")} - blue: llm, red: real` +
    (dimNames.length > 2 ? ` (size: ${dimNames[2]})` : "");
  svg.appendChild(legend);
  return svg;
}
