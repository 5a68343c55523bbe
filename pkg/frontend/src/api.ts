/**
 * Typed client for the annotation service endpoints
 * (/queue, /bundle/{id}, /decision, /summary, /export).
 */

export type Verdict = "keep" | "discard";

export interface BundleSummary {
  bundle_id: string;
  assembly_id: string;
  specification: string;
  flags: string[];
}

export interface BundleView {
  bundle_id: string;
  assembly_id: string;
  specification: string;
  gt_filenames: string[];
  status: string;
  reason_code: number | null;
  flags: string[];
  assembly_image_url: string;
  merged_image_url: string | null;
  merged_image_available: boolean;
}

export interface QueuePage {
  items: BundleSummary[];
  next_offset: number | null;
}

export interface Summary {
  pending: number;
  kept: number;
  discarded: number;
  discarded_by_reason: Record<string, number>;
}

export interface DecisionInput {
  bundle_id: string;
  verdict: Verdict;
  reason_code?: number;
  annotator_id: string;
}

/** Server rejected the request (4xx/5xx); carries the HTTP status. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await response.text();
    if (!response.ok) {
      let detail = body;
      try {
        detail = (JSON.parse(body) as { error?: string }).error ?? body;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(body) as T;
  }

  queue(offset = 0, limit?: number): Promise<QueuePage> {
    const params = new URLSearchParams({ offset: String(offset) });
    if (limit !== undefined) params.set("limit", String(limit));
    return this.request<QueuePage>(`/queue?${params.toString()}`);
  }

  bundle(bundleId: string): Promise<BundleView> {
    return this.request<BundleView>(`/bundle/${encodeURIComponent(bundleId)}`);
  }

  summary(): Promise<Summary> {
    return this.request<Summary>("/summary");
  }

  decide(decision: DecisionInput): Promise<unknown> {
    return this.request("/decision", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(decision),
    });
  }

  /** Export endpoint, parsed into one record per kept bundle. */
  async exportedItems(): Promise<unknown[]> {
    const response = await this.fetchFn(`${this.baseUrl}/export`);
    const text = await response.text();
    if (!response.ok) throw new ApiError(response.status, text);
    return text
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as unknown);
  }
}
