import type { ApiClient } from "./api.js";
import type { QueueItem } from "./queue.js";
import { drawWindowed, FULL_RANGE, WindowLevel } from "./windowing.js";

export type Axis = "x" | "y" | "z";
const AXES: Axis[] = ["x", "y", "z"];

// Side-by-side synchronized slice panels. Both panels always request the
// same axis/index; when the service has no volumes configured (503) the
// panels fall back to metadata-only comparison cards.
export class PairViewer {
  axis: Axis = "z";
  index = 0;
  windowLevel: WindowLevel = { ...FULL_RANGE };
  current: QueueItem | null = null;
  slicesEnabled: boolean | null = null;

  private root: HTMLElement;

  constructor(
    private doc: Document,
    container: HTMLElement,
    private api: ApiClient,
  ) {
    this.root = doc.createElement("div");
    this.root.className = "pair-viewer empty";
    this.root.textContent = "Select a flagged pair to review.";
    container.appendChild(this.root);
  }

  async open(item: QueueItem): Promise<void> {
    this.current = item;
    if (this.slicesEnabled === null) {
      this.slicesEnabled = await this.api.slicesAvailable(item.imageA.image_id);
    }
    this.render();
  }

  scrub(delta: number): void {
    if (!this.current) return;
    this.index = Math.max(0, this.index + delta);
    this.render();
  }

  cycleAxis(step: number): void {
    if (!this.current) return;
    const i = (AXES.indexOf(this.axis) + step + AXES.length) % AXES.length;
    this.axis = AXES[i];
    this.render();
  }

  render(): void {
    const doc = this.doc;
    this.root.textContent = "";
    this.root.className = "pair-viewer";
    const item = this.current;
    if (!item) {
      this.root.classList.add("empty");
      this.root.textContent = "Select a flagged pair to review.";
      return;
    }

    const head = doc.createElement("div");
    head.className = "pv-head";
    head.textContent =
      `${item.imageA.image_id} vs ${item.imageB.image_id} — ${item.flag.label}, ` +
      `d=${item.flag.distance.toFixed(3)}, ${item.flag.direction} ` +
      `(severity ${item.flag.severity.toFixed(1)}), suggested: ${item.flag.suggested}`;
    this.root.appendChild(head);

    if (this.slicesEnabled) {
      const panels = doc.createElement("div");
      panels.className = "pv-panels";
      for (const img of [item.imageA, item.imageB]) {
        const fig = doc.createElement("figure");
        fig.className = "pv-panel";
        const el = doc.createElement("img");
        el.className = "pv-slice";
        el.setAttribute("data-image-id", img.image_id);
        el.src = this.api.sliceUrl(img.image_id, this.axis, this.index);
        el.addEventListener("load", () => {
          const canvas = fig.querySelector("canvas");
          if (canvas && drawWindowed(el, canvas as HTMLCanvasElement, this.windowLevel)) {
            el.style.display = "none";
          }
        });
        fig.appendChild(el);
        fig.appendChild(doc.createElement("canvas"));
        const cap = doc.createElement("figcaption");
        cap.textContent = `${img.image_id} · subject ${img.subject_id} · ${img.database} · ${img.keypoints} kp`;
        fig.appendChild(cap);
        panels.appendChild(fig);
      }
      this.root.appendChild(panels);
      const pos = doc.createElement("div");
      pos.className = "pv-position";
      pos.textContent = `axis ${this.axis}, slice ${this.index}`;
      this.root.appendChild(pos);
    } else {
      // metadata-only comparison mode: verdicts remain possible
      const cards = doc.createElement("div");
      cards.className = "pv-meta-cards";
      for (const img of [item.imageA, item.imageB]) {
        const card = doc.createElement("dl");
        card.className = "pv-meta-card";
        for (const [k, v] of [
          ["image", img.image_id],
          ["subject", img.subject_id],
          ["database", img.database],
          ["keypoints", String(img.keypoints)],
        ]) {
          const dt = doc.createElement("dt");
          dt.textContent = k;
          const dd = doc.createElement("dd");
          dd.textContent = v;
          card.appendChild(dt);
          card.appendChild(dd);
        }
        cards.appendChild(card);
      }
      this.root.appendChild(cards);
      const note = doc.createElement("div");
      note.className = "pv-note";
      note.textContent = "Slice views unavailable (volumes not configured).";
      this.root.appendChild(note);
    }

    const help = doc.createElement("div");
    help.className = "pv-help";
    help.textContent = "S same · D different · U unsure · ←/→ scrub slice · ↑/↓ axis";
    this.root.appendChild(help);
  }
}
