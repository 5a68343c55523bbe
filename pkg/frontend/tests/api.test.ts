import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api";
import { FakeService } from "./fake_service";

function client(service: FakeService): ApiClient {
  return new ApiClient("", service.fetch);
}

describe("ApiClient", () => {
  it("loads the pending queue in bundle_id order", async () => {
    const service = new FakeService();
    service.seed(3);
    const page = await client(service).queue();
    expect(page.items.map((item) => item.bundle_id)).toEqual([
      "b-s-a1",
      "b-s-a2",
      "b-s-a3",
    ]);
  });

  it("fetches a full bundle view", async () => {
    const service = new FakeService();
    service.seed(1);
    const view = await client(service).bundle("b-s-a1");
    expect(view.specification).toBe("Spec sentence 1.");
    expect(view.assembly_image_url).toBe("/assets/b-s-a1/assembly");
  });

  it("maps server rejections to ApiError with status", async () => {
    const service = new FakeService();
    service.seed(1);
    await expect(client(service).bundle("ghost")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
    });
    await expect(
      client(service).decide({
        bundle_id: "b-s-a1",
        verdict: "discard",
        annotator_id: "ann",
      }),
    ).rejects.toBeInstanceOf(ApiError);
  });

  it("posts decisions and reads back the summary", async () => {
    const service = new FakeService();
    service.seed(2);
    const api = client(service);
    await api.decide({ bundle_id: "b-s-a1", verdict: "keep", annotator_id: "ann" });
    const summary = await api.summary();
    expect(summary.kept).toBe(1);
    expect(summary.pending).toBe(1);
  });

  it("parses the export stream line by line", async () => {
    const service = new FakeService();
    service.seed(2);
    const api = client(service);
    await api.decide({ bundle_id: "b-s-a2", verdict: "keep", annotator_id: "ann" });
    const items = await api.exportedItems();
    expect(items).toHaveLength(1);
    expect(items[0]).toMatchObject({ spec_id: "s-a2", source: "human_preference" });
  });
});
