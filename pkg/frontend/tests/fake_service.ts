/**
 * In-memory stand-in for the annotation service, behaviorally matched to
 * the real endpoints (same routes, payloads, status codes) so controller
 * tests and cross-endpoint checks run without a server.
 */

import type { BundleView, Summary } from "../src/api";

interface StoredBundle extends BundleView {
  source_spec_id: string;
}

export class FakeService {
  bundles = new Map<string, StoredBundle>();
  decisionsLog: Array<Record<string, unknown>> = [];
  failNetwork = false;

  seed(count: number): void {
    for (let i = 1; i <= count; i += 1) {
      const id = `b-s-a${i}`;
      this.bundles.set(id, {
        bundle_id: id,
        assembly_id: `a${i}`,
        specification: `Spec sentence ${i}.`,
        gt_filenames: ["part1.png", "part2.png"],
        status: "pending",
        reason_code: null,
        flags: [],
        assembly_image_url: `/assets/${id}/assembly`,
        merged_image_url: `/assets/${id}/merged`,
        merged_image_available: true,
        source_spec_id: `s-a${i}`,
      });
    }
  }

  private json(payload: unknown, status = 200): Response {
    return new Response(JSON.stringify(payload), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }

  summary(): Summary {
    const byReason: Record<string, number> = { "2": 0, "3": 0, "4": 0 };
    let pending = 0;
    let kept = 0;
    let discarded = 0;
    for (const bundle of this.bundles.values()) {
      if (bundle.status === "pending") pending += 1;
      if (bundle.status === "kept") kept += 1;
      if (bundle.status === "discarded") {
        discarded += 1;
        if (bundle.reason_code !== null) {
          byReason[String(bundle.reason_code)] =
            (byReason[String(bundle.reason_code)] ?? 0) + 1;
        }
      }
    }
    return { pending, kept, discarded, discarded_by_reason: byReason };
  }

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    if (this.failNetwork) {
      throw new TypeError("fetch failed (simulated network outage)");
    }
    const url = new URL(input, "http://fake");
    const path = url.pathname;

    if (path === "/queue") {
      const items = [...this.bundles.values()]
        .filter((b) => b.status === "pending")
        .sort((a, b) => a.bundle_id.localeCompare(b.bundle_id))
        .map((b) => ({
          bundle_id: b.bundle_id,
          assembly_id: b.assembly_id,
          specification: b.specification,
          flags: b.flags,
        }));
      return this.json({ items, next_offset: null });
    }

    if (path.startsWith("/bundle/")) {
      const bundle = this.bundles.get(path.slice("/bundle/".length));
      if (!bundle) return this.json({ error: "unknown bundle" }, 404);
      return this.json(bundle);
    }

    if (path === "/summary") {
      return this.json(this.summary());
    }

    if (path === "/decision") {
      const body = JSON.parse(String(init?.body ?? "{}")) as {
        bundle_id?: string;
        verdict?: string;
        reason_code?: number;
      };
      const bundle = this.bundles.get(body.bundle_id ?? "");
      if (!bundle) return this.json({ error: "unknown bundle" }, 404);
      if (body.verdict === "discard" && ![2, 3, 4].includes(body.reason_code ?? -1)) {
        return this.json({ error: "discard requires a reason_code" }, 422);
      }
      if (body.verdict !== "keep" && body.verdict !== "discard") {
        return this.json({ error: "bad verdict" }, 422);
      }
      bundle.status = body.verdict === "keep" ? "kept" : "discarded";
      bundle.reason_code = body.verdict === "discard" ? (body.reason_code ?? null) : null;
      this.decisionsLog.push({ ...body });
      return this.json({ ok: true });
    }

    if (path === "/export") {
      const lines = [...this.bundles.values()]
        .filter((b) => b.status === "kept")
        .sort((a, b) => a.bundle_id.localeCompare(b.bundle_id))
        .map((b) =>
          JSON.stringify({
            spec_id: b.source_spec_id,
            assembly_id: b.assembly_id,
            specification: b.specification,
            gt_filenames: b.gt_filenames,
            source: "human_preference",
          }),
        );
      return new Response(lines.join("\n") + (lines.length ? "\n" : ""), {
        status: 200,
        headers: { "Content-Type": "application/x-ndjson" },
      });
    }

    return this.json({ error: "not found" }, 404);
  };
}
