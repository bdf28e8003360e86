import { ApiClient, ApiError } from "./api.js";
import { renderDistributionPanel } from "./chart.js";
import {
  buildQueue,
  groupByDirection,
  nextUndecided,
  pairKey,
  QueueItem,
} from "./queue.js";
import type { DecisionRow, Report, Verdict } from "./types.js";
import { PairViewer } from "./viewer.js";

const VERDICT_KEYS: Record<string, Verdict> = {
  s: "same",
  d: "different",
  u: "unsure",
};

// Single-page review app. All authoritative state lives on the service
// (/api/report + /api/decisions); this class only holds the fetched copy,
// so a refresh reconstructs exactly the same view.
export class App {
  report: Report | null = null;
  decisions: DecisionRow[] = [];
  queue: QueueItem[] = [];
  selected = -1;
  viewer: PairViewer | null = null;
  curator: string;

  private sections: {
    header: HTMLElement;
    queue: HTMLElement;
    viewer: HTMLElement;
    chart: HTMLElement;
    toast: HTMLElement;
  } | null = null;

  constructor(
    private rootEl: HTMLElement,
    private api: ApiClient,
    private doc: Document = document,
    curator = "reviewer",
  ) {
    this.curator = curator;
    this.onKey = this.onKey.bind(this);
  }

  async init(): Promise<void> {
    try {
      const [report, decisions] = await Promise.all([
        this.api.getReport(),
        this.api.getDecisions(),
      ]);
      this.report = report;
      this.decisions = decisions;
    } catch (err) {
      this.renderRetryBanner(String(err));
      return;
    }
    this.queue = buildQueue(this.report, this.decisions);
    this.renderShell();
    this.renderAll();
    this.doc.addEventListener("keydown", this.onKey);
    const first = nextUndecided(this.queue);
    if (first >= 0) await this.select(first);
  }

  async refresh(): Promise<void> {
    const [report, decisions] = await Promise.all([
      this.api.getReport(),
      this.api.getDecisions(),
    ]);
    this.report = report;
    this.decisions = decisions;
    this.queue = buildQueue(report, decisions);
    if (this.selected >= this.queue.length) this.selected = -1;
    this.renderAll();
  }

  private renderRetryBanner(detail: string): void {
    this.rootEl.textContent = "";
    const banner = this.doc.createElement("div");
    banner.className = "retry-banner";
    const msg = this.doc.createElement("span");
    msg.textContent = `Review service unreachable (${detail}). `;
    const btn = this.doc.createElement("button");
    btn.textContent = "Retry";
    btn.addEventListener("click", () => void this.init());
    banner.appendChild(msg);
    banner.appendChild(btn);
    this.rootEl.appendChild(banner);
  }

  private renderShell(): void {
    const doc = this.doc;
    this.rootEl.textContent = "";
    const header = doc.createElement("header");
    header.className = "app-header";
    const queue = doc.createElement("section");
    queue.className = "queue-section";
    const viewer = doc.createElement("section");
    viewer.className = "viewer-section";
    const chart = doc.createElement("section");
    chart.className = "chart-section";
    const toast = doc.createElement("div");
    toast.className = "toast";
    toast.style.display = "none";
    for (const el of [header, queue, viewer, chart, toast]) this.rootEl.appendChild(el);
    this.sections = { header, queue, viewer, chart, toast };
    this.viewer = new PairViewer(doc, viewer, this.api);
  }

  private renderAll(): void {
    this.renderHeader();
    this.renderQueue();
    this.renderChart();
  }

  private renderHeader(): void {
    if (!this.sections || !this.report) return;
    const h = this.sections.header;
    h.textContent = "";
    const title = this.doc.createElement("h1");
    title.textContent = "keysig review";
    const info = this.doc.createElement("span");
    info.className = "header-info";
    info.textContent =
      `report v${this.report.report_version} · ${this.report.images.length} images · ` +
      `${this.report.flags.length} flag(s) · ${this.decisions.length} decision(s)`;
    h.appendChild(title);
    h.appendChild(info);
  }

  private renderQueue(): void {
    if (!this.sections) return;
    const doc = this.doc;
    const host = this.sections.queue;
    host.textContent = "";
    if (this.queue.length === 0) {
      const empty = doc.createElement("div");
      empty.className = "queue-empty";
      empty.textContent = "No inconsistencies flagged.";
      host.appendChild(empty);
      return;
    }
    const groups = groupByDirection(this.queue);
    const titles: [keyof typeof groups, string][] = [
      ["duplicates", "Duplicate candidates (too similar)"],
      ["mislabeled", "Mislabeled-same candidates (too dissimilar)"],
    ];
    for (const [key, title] of titles) {
      const items = groups[key];
      if (!items.length) continue;
      const hd = doc.createElement("h2");
      hd.textContent = title;
      host.appendChild(hd);
      const list = doc.createElement("ul");
      list.className = `queue-list ${key}`;
      for (const item of items) {
        const li = doc.createElement("li");
        li.className = "queue-row";
        const idx = this.queue.indexOf(item);
        li.setAttribute("data-queue-index", String(idx));
        if (idx === this.selected) li.classList.add("selected");
        const label = doc.createElement("span");
        label.textContent =
          `${item.imageA.image_id} / ${item.imageB.image_id} · ` +
          `d=${item.flag.distance.toFixed(2)} · severity ${item.flag.severity.toFixed(1)}`;
        li.appendChild(label);
        if (item.decision) {
          const badge = doc.createElement("span");
          badge.className = `verdict-badge ${item.decision}`;
          badge.textContent = item.decision;
          li.appendChild(badge);
        }
        li.addEventListener("click", () => void this.select(idx));
        list.appendChild(li);
      }
      host.appendChild(list);
    }
  }

  private renderChart(): void {
    if (!this.sections || !this.report) return;
    const doc = this.doc;
    const host = this.sections.chart;
    host.textContent = "";
    const hd = doc.createElement("h2");
    hd.textContent = "Distance distributions by relationship label";
    host.appendChild(hd);
    host.appendChild(
      renderDistributionPanel(doc, this.report, (flag) => {
        const idx = this.queue.findIndex(
          (q) => q.flag.a === flag.a && q.flag.b === flag.b,
        );
        if (idx >= 0) void this.select(idx);
      }),
    );
    const btn = doc.createElement("button");
    btn.className = "recurate-button";
    btn.textContent = "Re-curate";
    btn.addEventListener("click", () => void this.recurate());
    host.appendChild(btn);
  }

  async select(idx: number): Promise<void> {
    if (idx < 0 || idx >= this.queue.length) return;
    this.selected = idx;
    this.renderQueue();
    if (this.viewer) await this.viewer.open(this.queue[idx]);
  }

  /** Keyboard: S/D/U verdicts, arrows scrub, up/down cycle axis. */
  onKey(ev: KeyboardEvent): void {
    const verdict = VERDICT_KEYS[ev.key.toLowerCase()];
    if (verdict && this.selected >= 0) {
      ev.preventDefault();
      void this.decide(verdict);
      return;
    }
    if (!this.viewer) return;
    if (ev.key === "ArrowRight") this.viewer.scrub(1);
    else if (ev.key === "ArrowLeft") this.viewer.scrub(-1);
    else if (ev.key === "ArrowUp") this.viewer.cycleAxis(1);
    else if (ev.key === "ArrowDown") this.viewer.cycleAxis(-1);
  }

  /** POST the verdict, read it back into local state, advance the queue.
   * Optimistic UI with rollback when the POST fails. */
  async decide(verdict: Verdict): Promise<void> {
    if (this.selected < 0) return;
    const item = this.queue[this.selected];
    const prev = item.decision;
    const prevSelected = this.selected;
    item.decision = verdict;
    const next = nextUndecided(this.queue, this.selected);
    this.renderQueue();
    if (next >= 0) void this.select(next);
    try {
      const stored = await this.api.postDecision(
        [item.flag.a, item.flag.b],
        verdict,
        this.curator,
      );
      this.decisions.push(stored);
      this.renderHeader();
    } catch (err) {
      item.decision = prev; // rollback the optimistic advance
      this.selected = prevSelected;
      this.renderQueue();
      this.showToast(`Decision failed: ${err}`, null);
    }
  }

  async recurate(): Promise<void> {
    try {
      await this.api.recurate();
      await this.refresh();
      this.showToast("Re-curated.", null);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.showToast("Re-curation already running.", () => void this.recurate());
      } else {
        this.showToast(`Re-curate failed: ${err}`, () => void this.recurate());
      }
    }
  }

  showToast(message: string, retry: (() => void) | null): void {
    if (!this.sections) return;
    const toast = this.sections.toast;
    toast.textContent = "";
    toast.style.display = "block";
    const span = this.doc.createElement("span");
    span.textContent = message;
    toast.appendChild(span);
    if (retry) {
      const btn = this.doc.createElement("button");
      btn.textContent = "Retry";
      btn.addEventListener("click", () => {
        toast.style.display = "none";
        retry();
      });
      toast.appendChild(btn);
    }
  }

  /** Invariant check helper: every verdict shown is present in the log. */
  verdictsConsistent(): boolean {
    const logged = new Map<string, Verdict>();
    for (const d of this.decisions) logged.set(pairKey(d.pair[0], d.pair[1]), d.verdict);
    return this.queue.every(
      (q) =>
        q.decision === null || logged.get(pairKey(q.flag.a, q.flag.b)) === q.decision,
    );
  }
}
