// JSON shapes served by the review service (the report document and the
// decision log are the only authoritative state; the UI derives everything).

export interface ImageRow {
  image_id: string;
  subject_id: string;
  database: string;
  keypoints: number;
}

export interface PairRow {
  a: number;
  b: number;
  c_ab: number;
  c_ba: number;
  intersection: number;
  union: number;
  jaccard: number;
  distance: number;
}

export interface ClassStatsRow {
  n_finite: number;
  n_no_evidence: number;
  median: number | null;
  mad: number | null;
  quantiles: Record<string, number> | null;
}

export type FlagDirection = "too_similar" | "too_dissimilar";
export type Suggestion = "same_subject" | "different_subject";
export type Verdict = "same" | "different" | "unsure";

export interface FlagRow {
  a: number;
  b: number;
  label: string;
  distance: number;
  direction: FlagDirection;
  severity: number;
  suggested: Suggestion;
}

export interface Report {
  format: string;
  report_version: number;
  pipeline_version: string;
  config: Record<string, unknown>;
  images: ImageRow[];
  relations: { subject_a: string; subject_b: string; label: string }[];
  total_pairs: number;
  no_evidence_pairs: number;
  pairs: PairRow[];
  class_stats: Record<string, ClassStatsRow>;
  flags: FlagRow[];
  decisions_applied: number;
}

export interface DecisionRow {
  pair: [number, number];
  verdict: Verdict;
  curator: string;
  timestamp: string;
}
