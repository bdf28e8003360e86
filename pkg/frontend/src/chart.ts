import type { FlagRow, ImageRow, Report } from "./types.js";

// Distribution panel: one horizontal strip per relationship class showing a
// histogram of finite pair distances, with flagged pairs overplotted as
// dots. Click a dot to open its pair in the viewer.

const CLASS_COLORS: Record<string, string> = {
  SM: "#e377c2",
  MZ: "#9467bd",
  DZ: "#8c564b",
  FS: "#2ca02c",
  UR: "#1f77b4",
};

const WIDTH = 640;
const STRIP_H = 64;
const PAD = 40;
const BINS = 48;

function pairClass(report: Report, a: ImageRow, b: ImageRow): string {
  if (a.subject_id === b.subject_id) return "SM";
  if (a.database !== b.database) return "UR";
  const key = [a.subject_id, b.subject_id].sort().join("|");
  for (const rel of report.relations) {
    if ([rel.subject_a, rel.subject_b].sort().join("|") === key) return rel.label;
  }
  return "UR";
}

export function classesInOrder(report: Report): string[] {
  return Object.entries(report.class_stats)
    .filter(([, s]) => s.n_finite > 0 && s.median !== null)
    .sort((x, y) => (x[1].median as number) - (y[1].median as number))
    .map(([label]) => label);
}

export function renderDistributionPanel(
  doc: Document,
  report: Report,
  onDotClick: (flag: FlagRow) => void,
): SVGSVGElement {
  const classes = classesInOrder(report);
  const byClass = new Map<string, number[]>(classes.map((c) => [c, []]));
  for (const p of report.pairs) {
    const cls = pairClass(report, report.images[p.a], report.images[p.b]);
    byClass.get(cls)?.push(p.distance);
  }
  const all = report.pairs.map((p) => p.distance);
  const lo = all.length ? Math.min(...all) : 0;
  const hi = all.length ? Math.max(...all) : 1;
  const span = hi > lo ? hi - lo : 1;
  const x = (d: number) => PAD + ((d - lo) / span) * (WIDTH - 2 * PAD);

  const svgNS = "http://www.w3.org/2000/svg";
  const height = Math.max(classes.length, 1) * STRIP_H + 24;
  const svg = doc.createElementNS(svgNS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${WIDTH} ${height}`);
  svg.setAttribute("width", String(WIDTH));
  svg.setAttribute("class", "distribution-panel");

  classes.forEach((cls, row) => {
    const top = row * STRIP_H + 8;
    const base = top + STRIP_H - 18;
    const dists = byClass.get(cls) ?? [];

    const counts = new Array(BINS).fill(0);
    for (const d of dists) {
      const bin = Math.min(BINS - 1, Math.floor(((d - lo) / span) * BINS));
      counts[bin]++;
    }
    const peak = Math.max(1, ...counts);
    const binW = (WIDTH - 2 * PAD) / BINS;
    for (let b = 0; b < BINS; b++) {
      if (!counts[b]) continue;
      const h = (counts[b] / peak) * (STRIP_H - 30);
      const rect = doc.createElementNS(svgNS, "rect");
      rect.setAttribute("x", String(PAD + b * binW));
      rect.setAttribute("y", String(base - h));
      rect.setAttribute("width", String(Math.max(1, binW - 1)));
      rect.setAttribute("height", String(h));
      rect.setAttribute("fill", CLASS_COLORS[cls] ?? "#888");
      rect.setAttribute("opacity", "0.75");
      svg.appendChild(rect);
    }

    const label = doc.createElementNS(svgNS, "text");
    label.setAttribute("x", "4");
    label.setAttribute("y", String(top + 14));
    label.setAttribute("class", "strip-label");
    label.textContent = `${cls} (${dists.length})`;
    svg.appendChild(label);

    const axis = doc.createElementNS(svgNS, "line");
    axis.setAttribute("x1", String(PAD));
    axis.setAttribute("x2", String(WIDTH - PAD));
    axis.setAttribute("y1", String(base + 1));
    axis.setAttribute("y2", String(base + 1));
    axis.setAttribute("stroke", "#ccc");
    svg.appendChild(axis);

    for (const flag of report.flags.filter((f) => f.label === cls)) {
      const dot = doc.createElementNS(svgNS, "circle");
      dot.setAttribute("cx", String(x(flag.distance)));
      dot.setAttribute("cy", String(base - 6));
      dot.setAttribute("r", "5");
      dot.setAttribute("class", "flag-dot");
      dot.setAttribute(
        "fill",
        flag.direction === "too_dissimilar" ? "#d62728" : "#17becf",
      );
      dot.addEventListener("click", () => onDotClick(flag));
      svg.appendChild(dot);
    }
  });
  return svg;
}
