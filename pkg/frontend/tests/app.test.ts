// @vitest-environment jsdom
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";
import { renderDistributionPanel } from "../src/chart.js";
import type { DecisionRow, Report } from "../src/types.js";

function sampleReport(): Report {
  const images = Array.from({ length: 6 }, (_, i) => ({
    image_id: `im-${i}`,
    subject_id: `s${Math.floor(i / 2)}`,
    database: "DB",
    keypoints: 25,
  }));
  return {
    format: "keysig-report",
    report_version: 2,
    pipeline_version: "0.1.0",
    config: {},
    images,
    relations: [],
    total_pairs: 15,
    no_evidence_pairs: 11,
    pairs: [
      { a: 0, b: 1, c_ab: 20, c_ba: 20, intersection: 20, union: 30, jaccard: 0.66, distance: 0.4 },
      { a: 2, b: 3, c_ab: 18, c_ba: 18, intersection: 18, union: 32, jaccard: 0.56, distance: 0.57 },
      { a: 0, b: 2, c_ab: 1, c_ba: 1, intersection: 1, union: 49, jaccard: 0.02, distance: 3.9 },
      { a: 1, b: 4, c_ab: 15, c_ba: 15, intersection: 15, union: 35, jaccard: 0.43, distance: 0.85 },
    ],
    class_stats: {
      SM: { n_finite: 3, n_no_evidence: 0, median: 0.57, mad: 0.1, quantiles: { "0.5": 0.57 } },
      UR: { n_finite: 1, n_no_evidence: 11, median: 3.9, mad: 0.0, quantiles: { "0.5": 3.9 } },
    },
    flags: [
      {
        a: 1, b: 4, label: "UR", distance: 0.85, direction: "too_similar",
        severity: 12.0, suggested: "same_subject",
      },
      {
        a: 0, b: 2, label: "UR", distance: 3.9, direction: "too_similar",
        severity: 5.0, suggested: "same_subject",
      },
    ],
    decisions_applied: 0,
  };
}

type FetchStub = (url: string, init?: RequestInit) => Promise<Response>;

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function stubService(report: Report, opts: { failDecisions?: boolean; slices?: boolean } = {}) {
  const decisions: DecisionRow[] = [];
  const stub: FetchStub = async (url, init) => {
    const u = String(url);
    if (u.endsWith("/api/report")) return jsonResponse(report);
    if (u.endsWith("/api/decisions") && (!init || init.method !== "POST")) {
      return jsonResponse(decisions);
    }
    if (u.endsWith("/api/decisions")) {
      if (opts.failDecisions) return jsonResponse({ error: "nope", detail: "" }, 500);
      const body = JSON.parse(String(init?.body));
      const row: DecisionRow = { ...body, timestamp: "2026-01-01T00:00:00+00:00" };
      decisions.push(row);
      return jsonResponse(row, 201);
    }
    if (u.includes("/slice")) {
      return new Response("", { status: opts.slices === false ? 503 : 200 });
    }
    if (u.endsWith("/api/recurate")) return jsonResponse({ error: "busy", detail: "" }, 409);
    return jsonResponse({ error: "not found", detail: u }, 404);
  };
  return { stub, decisions };
}

describe("App", () => {
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = '<div id="app"></div>';
    root = document.getElementById("app")!;
  });

  afterEach(() => {
    vi.unstubAllGlobals();
  });

  it("renders a retry banner when the service is unreachable", async () => {
    vi.stubGlobal("fetch", async () => {
      throw new Error("connection refused");
    });
    const app = new App(root, new ApiClient(), document);
    await app.init();
    expect(root.querySelector(".retry-banner")).toBeTruthy();
    expect(root.querySelector(".retry-banner button")).toBeTruthy();
  });

  it("renders queue rows severity-sorted and selects the first", async () => {
    const { stub } = stubService(sampleReport());
    vi.stubGlobal("fetch", stub);
    const app = new App(root, new ApiClient(), document);
    await app.init();
    const rows = [...root.querySelectorAll(".queue-row")];
    expect(rows).toHaveLength(2);
    expect(rows[0].textContent).toContain("im-1 / im-4");
    expect(root.querySelector(".queue-row.selected")).toBeTruthy();
  });

  it("keyboard verdict posts, badges the row, and advances", async () => {
    const { stub, decisions } = stubService(sampleReport());
    vi.stubGlobal("fetch", stub);
    const app = new App(root, new ApiClient(), document, "kay");
    await app.init();
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "s" }));
    await vi.waitFor(() => expect(app.decisions).toHaveLength(1));
    expect(decisions[0].verdict).toBe("same");
    expect(decisions[0].pair).toEqual([1, 4]);
    expect(app.verdictsConsistent()).toBe(true);
    expect(root.querySelector(".verdict-badge.same")).toBeTruthy();
    expect(app.selected).toBe(1); // advanced to the next undecided item
  });

  it("rolls back the optimistic advance when the POST fails", async () => {
    const { stub } = stubService(sampleReport(), { failDecisions: true });
    vi.stubGlobal("fetch", stub);
    const app = new App(root, new ApiClient(), document);
    await app.init();
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "d" }));
    await vi.waitFor(() => {
      expect(root.querySelector(".toast")?.textContent).toContain("Decision failed");
    });
    expect(app.queue[0].decision).toBeNull();
    expect(app.selected).toBe(0);
    expect(root.querySelector(".verdict-badge")).toBeNull();
  });

  it("falls back to metadata cards when slices are unavailable (503)", async () => {
    const { stub } = stubService(sampleReport(), { slices: false });
    vi.stubGlobal("fetch", stub);
    const app = new App(root, new ApiClient(), document);
    await app.init();
    expect(root.querySelector(".pv-meta-cards")).toBeTruthy();
    expect(root.querySelectorAll(".pv-meta-card")).toHaveLength(2);
    expect(root.querySelector(".pv-slice")).toBeNull();
  });

  it("shows the empty state when there are no flags", async () => {
    const report = sampleReport();
    report.flags = [];
    const { stub } = stubService(report);
    vi.stubGlobal("fetch", stub);
    const app = new App(root, new ApiClient(), document);
    await app.init();
    expect(root.querySelector(".queue-empty")?.textContent).toContain("No inconsistencies");
  });

  it("409 on recurate shows a toast with a retry action", async () => {
    const { stub } = stubService(sampleReport());
    vi.stubGlobal("fetch", stub);
    const app = new App(root, new ApiClient(), document);
    await app.init();
    (root.querySelector(".recurate-button") as HTMLButtonElement).click();
    await vi.waitFor(() => {
      expect(root.querySelector(".toast")?.textContent).toContain("already running");
    });
    expect(root.querySelector(".toast button")).toBeTruthy();
  });
});

describe("distribution panel", () => {
  it("orders strips by median and draws one dot per flag", () => {
    const report = sampleReport();
    const svg = renderDistributionPanel(document, report, () => {});
    const labels = [...svg.querySelectorAll(".strip-label")].map((t) => t.textContent);
    expect(labels?.[0]).toContain("SM");
    expect(labels?.[1]).toContain("UR");
    expect(svg.querySelectorAll(".flag-dot")).toHaveLength(2);
  });

  it("dot click opens the pair", () => {
    const report = sampleReport();
    let clicked: unknown = null;
    const svg = renderDistributionPanel(document, report, (f) => (clicked = f));
    (svg.querySelector(".flag-dot") as SVGCircleElement).dispatchEvent(
      new MouseEvent("click"),
    );
    expect(clicked).not.toBeNull();
  });

  it("zero flags renders zero dots", () => {
    const report = sampleReport();
    report.flags = [];
    const svg = renderDistributionPanel(document, report, () => {});
    expect(svg.querySelectorAll(".flag-dot")).toHaveLength(0);
  });
});
