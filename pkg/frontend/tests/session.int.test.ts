// @vitest-environment jsdom
//
// End-to-end scripted review session against a real review service: build a
// small synthetic cohort with one injected subject-ID error through the CLI,
// serve it, then drive the UI in a DOM — decide every flag by keyboard,
// trigger re-curation, and check the distribution panel shows zero dots and
// every verdict landed in the decisions JSONL.
import { execSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";

const PORT = 8900 + (process.pid % 500); // avoid stale-server collisions
const BASE = `http://127.0.0.1:${PORT}`;

let workDir: string;
let server: ChildProcess | null = null;
let truthPair: [string, string] | null = null;

async function waitForServer(timeoutMs = 20_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/api/report`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("review service did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "keysig-ui-"));
  const run = (cmd: string) =>
    execSync(cmd, { cwd: workDir, encoding: "utf-8", stdio: ["ignore", "pipe", "pipe"] });

  const synthOut = run(
    "keysig synth --out data --subjects 6 --size 64 --inject 1",
  );
  const m = synthOut.match(/(img-\d+-\d+) <-> (img-\d+-\d+)/);
  if (!m) throw new Error(`no ground truth in synth output:\n${synthOut}`);
  truthPair = [m[1], m[2]];

  run("keysig detect --in data/volumes --out data/sigs");
  run(
    "keysig score --sigs data/sigs --metadata data/metadata.csv --out data/report.json",
  );
  run("keysig curate --report data/report.json --out data/curated.json");

  server = spawn(
    "keysig",
    [
      "serve",
      "--report",
      "data/curated.json",
      "--decisions",
      "data/decisions.jsonl",
      "--volumes",
      "data/metadata.csv",
      "--bind",
      `127.0.0.1:${PORT}`,
    ],
    { cwd: workDir, stdio: "ignore" },
  );
  await waitForServer();
}, 120_000);

afterAll(() => {
  if (server) server.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe("scripted review session", () => {
  it(
    "decides all flags by keyboard, re-curates, and the panel shows zero dots",
    async () => {
      document.body.innerHTML = '<div id="app"></div>';
      const root = document.getElementById("app")!;
      const api = new ApiClient(BASE);
      const app = new App(root, api, document, "scripted-session");
      await app.init();

      expect(app.report).not.toBeNull();
      const startVersion = app.report!.report_version;
      const flagCount = app.queue.length;
      expect(flagCount).toBeGreaterThan(0);
      expect(
        root.querySelectorAll(".distribution-panel .flag-dot").length,
      ).toBe(flagCount);

      // the slice panels must be live (volumes are configured)
      expect(root.querySelector(".pv-slice")).toBeTruthy();

      // arrow keys scrub both panels to the same axis/index
      document.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowRight" }));
      const slices = [...root.querySelectorAll(".pv-slice")] as HTMLImageElement[];
      expect(slices).toHaveLength(2);
      for (const img of slices) {
        expect(img.src).toContain("axis=z");
        expect(img.src).toContain("index=1");
      }

      const truthKey = [...truthPair!].sort().join("|");
      let decided = 0;
      while (decided < flagCount) {
        const item = app.queue[app.selected];
        expect(item).toBeTruthy();
        const itemKey = [item.imageA.image_id, item.imageB.image_id]
          .sort()
          .join("|");
        const key = itemKey === truthKey ? "s" : "d";
        document.dispatchEvent(new KeyboardEvent("keydown", { key }));
        decided += 1;
        await vi.waitFor(() => expect(app.decisions).toHaveLength(decided));
      }
      expect(app.verdictsConsistent()).toBe(true);
      expect(root.querySelectorAll(".verdict-badge")).toHaveLength(flagCount);

      // every verdict entered in the UI is in the JSONL log on disk
      const logLines = readFileSync(join(workDir, "data", "decisions.jsonl"), "utf-8")
        .trim()
        .split("\n")
        .map((l) => JSON.parse(l));
      expect(logLines).toHaveLength(flagCount);
      for (const d of app.decisions) {
        expect(
          logLines.some(
            (l) =>
              l.pair[0] === d.pair[0] &&
              l.pair[1] === d.pair[1] &&
              l.verdict === d.verdict,
          ),
        ).toBe(true);
      }

      // one-click re-curation refreshes to the new version with zero dots
      (root.querySelector(".recurate-button") as HTMLButtonElement).click();
      await vi.waitFor(
        () => expect(app.report!.report_version).toBe(startVersion + 1),
        { timeout: 15_000 },
      );
      expect(app.report!.flags).toHaveLength(0);
      expect(root.querySelectorAll(".distribution-panel .flag-dot")).toHaveLength(0);
      expect(root.querySelector(".queue-empty")?.textContent).toContain(
        "No inconsistencies",
      );
    },
    120_000,
  );
});
