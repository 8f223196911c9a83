import { describe, expect, it } from "vitest";

import { ReviewApi } from "../src/api.js";
import { renderApp, renderDetail, renderQueue } from "../src/render.js";
import { QueueController } from "../src/state.js";
import { DOCUMENTED_PATHS, FIXTURE, FakeService } from "./fake_service.js";

function makeController(service: FakeService): QueueController {
  const api = new ReviewApi("", service.fetch);
  return new QueueController(api, "test_reviewer");
}

describe("queue rendering", () => {
  it("renders items sorted by score descending", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    const page = controller.state.page!;
    const scores = page.items.map((item) => item.score);
    expect(scores).toEqual([...scores].sort((a, b) => b - a));
    const html = renderQueue(controller.state);
    expect(html).toContain("table");
    expect(html).toContain(`node ${page.items[0]!.node}`);
  });

  it("paginates 25 items as 10/10/5 with no duplicates", async () => {
    const service = new FakeService(25);
    const controller = makeController(service);
    await controller.loadQueue();
    expect(controller.pageCount()).toBe(3);
    const seen: string[] = [];
    const sizes: number[] = [];
    for (;;) {
      sizes.push(controller.state.page!.items.length);
      seen.push(...controller.state.page!.items.map((item) => item.id));
      if (controller.state.pageNumber >= controller.pageCount()) break;
      await controller.nextPage();
    }
    expect(sizes).toEqual([10, 10, 5]);
    expect(new Set(seen).size).toBe(25);
    expect(renderQueue(controller.state)).toContain("page 3 / 3");
  });

  it("renders the empty state for an empty queue", async () => {
    const service = new FakeService(0);
    const controller = makeController(service);
    await controller.loadQueue();
    expect(renderQueue(controller.state)).toContain("No open anomalies");
  });

  it("shows clause text and bit contributions in the detail pane", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    await controller.select(FIXTURE.detail_sexflip.id);
    const html = renderDetail(controller.state);
    for (const clause of FIXTURE.detail_sexflip.violated_clauses) {
      expect(html).toContain(`${clause.bits.toFixed(2)} bits`);
    }
    // the human-readable rule text is shown, not just a number
    expect(html).toContain("attr_eq(x, sex,");
    expect(html).toContain("1-hop context");
  });
});

describe("resolution round trip", () => {
  it("accepting the sex-flip repair drops the item below the threshold", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    await controller.select(FIXTURE.detail_sexflip.id);
    const repairIndex = FIXTURE.detail_sexflip.repairs.findIndex((r) =>
      r.description.startsWith("sex:"),
    );
    expect(repairIndex).toBeGreaterThanOrEqual(0);

    // apply_repair never fires without explicit confirmation
    controller.requestRepair(repairIndex);
    expect(service.requests.filter((r) => r.method === "POST")).toHaveLength(0);
    await controller.confirmRepair();

    const post = service.requests.find((r) => r.method === "POST");
    expect(post?.path).toBe(`/api/anomalies/${FIXTURE.detail_sexflip.id}/resolution`);
    expect(post?.body).toMatchObject({
      action: "apply_repair",
      repair_index: repairIndex,
      actor: "test_reviewer",
    });

    const threshold = FIXTURE.queue_page1.threshold;
    expect(controller.state.lastResolution?.newScore).toBeLessThan(threshold);
    expect(controller.state.lastResolution?.belowThreshold).toBe(true);
    // the item left the open queue
    const openIds = controller.state.page!.items.map((item) => item.id);
    expect(openIds).not.toContain(FIXTURE.detail_sexflip.id);
    expect(renderApp(controller.state)).toContain("below threshold");
  });

  it("reject closes the item without bumping the graph version", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    const target = controller.state.page!.items.find((i) => i.id !== FIXTURE.detail_sexflip.id)!;
    await controller.select(target.id);
    const versionBefore = service.version;
    await controller.reject();
    expect(service.version).toBe(versionBefore);
    expect(service.resolved.has(target.id)).toBe(true);
  });

  it("ignores a second submit while one is in flight", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    await controller.select(FIXTURE.detail_sexflip.id);
    controller.requestRepair(0);
    const first = controller.confirmRepair();
    const second = controller.confirmRepair(); // double-click
    await Promise.all([first, second]);
    const posts = service.requests.filter((r) => r.method === "POST");
    expect(posts).toHaveLength(1);
  });
});

describe("conflict and staleness handling", () => {
  it("renders a 409 as a conflict banner with a refresh path", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    await controller.select(FIXTURE.detail_sexflip.id);
    service.resolved.add(FIXTURE.detail_sexflip.id); // someone else resolved it
    controller.requestRepair(0);
    await controller.confirmRepair();
    expect(controller.state.banner.kind).toBe("conflict");
    expect(renderApp(controller.state)).toContain("Refresh and retry");
    await controller.refreshAfterConflict();
    expect(controller.state.banner.kind).toBe("none");
    const openIds = controller.state.page!.items.map((item) => item.id);
    expect(openIds).not.toContain(FIXTURE.detail_sexflip.id);
  });

  it("shows a stale banner when the server version advances between fetches", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    service.version += 3; // concurrent writer moved the graph
    await controller.select(controller.state.page!.items[0]!.id);
    expect(controller.state.banner.kind).toBe("stale");
    expect(renderApp(controller.state)).toContain("Refresh");
  });

  it("keeps prior state on network failure and offers a retry", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    const before = controller.state.page;
    service.failNextWith = "network";
    await controller.loadQueue();
    expect(controller.state.banner.kind).toBe("error");
    expect(controller.state.page).toBe(before); // no state corruption
    await controller.loadQueue();
    expect(controller.state.banner.kind).toBe("none");
  });

  it("5xx responses are marked retriable", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    service.failNextWith = 503;
    await controller.loadQueue();
    const banner = controller.state.banner;
    expect(banner.kind).toBe("error");
    if (banner.kind === "error") expect(banner.retriable).toBe(true);
  });
});

describe("API discipline", () => {
  it("issues only documented endpoints across a full review session", async () => {
    const service = new FakeService();
    const controller = makeController(service);
    await controller.loadQueue();
    await controller.nextPage();
    await controller.select(FIXTURE.detail_sexflip.id);
    controller.requestRepair(0);
    await controller.confirmRepair();
    await controller.loadQueue();
    const api = new ReviewApi("", service.fetch);
    await api.fetchStats();
    await api.fetchGrammar();
    await api.rescore();
    expect(service.undocumented).toEqual([]);
    for (const request of service.requests) {
      expect(DOCUMENTED_PATHS.some((pattern) => pattern.test(request.path))).toBe(true);
    }
  });
});
