import type { DecisionRow, FlagRow, ImageRow, Report, Verdict } from "./types.js";

// One review-queue row: the flag plus both images' metadata and the active
// decision (latest per pair wins, mirroring the server's replay rule).
export interface QueueItem {
  flag: FlagRow;
  imageA: ImageRow;
  imageB: ImageRow;
  decision: Verdict | null;
}

export function pairKey(a: number, b: number): string {
  return a < b ? `${a}:${b}` : `${b}:${a}`;
}

export function activeDecisions(decisions: DecisionRow[]): Map<string, Verdict> {
  const active = new Map<string, Verdict>();
  for (const d of decisions) {
    active.set(pairKey(d.pair[0], d.pair[1]), d.verdict);
  }
  return active;
}

/** Severity-descending queue (stable: the report already orders flags that
 * way and ties keep their report order). */
export function buildQueue(report: Report, decisions: DecisionRow[]): QueueItem[] {
  const active = activeDecisions(decisions);
  const items = report.flags.map((flag) => ({
    flag,
    imageA: report.images[flag.a],
    imageB: report.images[flag.b],
    decision: active.get(pairKey(flag.a, flag.b)) ?? null,
  }));
  // stable sort on severity; equal severities keep report order
  return items
    .map((item, i) => ({ item, i }))
    .sort((x, y) => y.item.flag.severity - x.item.flag.severity || x.i - y.i)
    .map(({ item }) => item);
}

export interface GroupedQueue {
  duplicates: QueueItem[]; // too_similar: same subject hiding behind two ids
  mislabeled: QueueItem[]; // too_dissimilar: different subjects sharing an id
}

export function groupByDirection(items: QueueItem[]): GroupedQueue {
  return {
    duplicates: items.filter((i) => i.flag.direction === "too_similar"),
    mislabeled: items.filter((i) => i.flag.direction === "too_dissimilar"),
  };
}

export function nextUndecided(items: QueueItem[], after = -1): number {
  for (let i = after + 1; i < items.length; i++) {
    if (items[i].decision === null) return i;
  }
  for (let i = 0; i <= after && i < items.length; i++) {
    if (items[i].decision === null) return i;
  }
  return -1;
}
