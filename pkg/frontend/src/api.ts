import type { DecisionRow, FlagRow, Report, Verdict } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function toError(resp: Response): Promise<ApiError> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body && body.error) detail = `${body.error}: ${body.detail ?? ""}`;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(private base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) throw await toError(resp);
    return (await resp.json()) as T;
  }

  getReport(): Promise<Report> {
    return this.getJson<Report>("/api/report");
  }

  getFlags(): Promise<FlagRow[]> {
    return this.getJson<FlagRow[]>("/api/flags");
  }

  getDecisions(): Promise<DecisionRow[]> {
    return this.getJson<DecisionRow[]>("/api/decisions");
  }

  async postDecision(
    pair: [number, number],
    verdict: Verdict,
    curator: string,
  ): Promise<DecisionRow> {
    const resp = await fetch(this.base + "/api/decisions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair, verdict, curator }),
    });
    if (!resp.ok) throw await toError(resp);
    return (await resp.json()) as DecisionRow;
  }

  async recurate(): Promise<{ report_version: number; flags: number }> {
    const resp = await fetch(this.base + "/api/recurate", { method: "POST" });
    if (!resp.ok) throw await toError(resp);
    return (await resp.json()) as { report_version: number; flags: number };
  }

  sliceUrl(imageId: string, axis: "x" | "y" | "z", index: number): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}/slice?axis=${axis}&index=${index}`;
  }

  /** Probe whether slice endpoints are enabled (503 when not configured). */
  async slicesAvailable(imageId: string): Promise<boolean> {
    try {
      const resp = await fetch(this.sliceUrl(imageId, "z", 0));
      return resp.status !== 503;
    } catch {
      return false;
    }
  }
}
