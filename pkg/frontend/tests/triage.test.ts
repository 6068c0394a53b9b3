import { describe, expect, it } from "vitest";

import { ReviewApiClient } from "../src/api.js";
import { MemoryStore } from "../src/storage.js";
import { bucketPreview, TriageSession } from "../src/triage.js";
import { fakeTransport, triageQueue } from "./fakes.js";

function session(clusters = [0, 1, 2], store = new MemoryStore()) {
  const { fetchFn, posts } = fakeTransport({ "/queue/triage": triageQueue(clusters) });
  const api = new ReviewApiClient("http://engine", fetchFn);
  return { session: new TriageSession(api, "alice", store), posts, store };
}

describe("triage session", () => {
  it("groups queue items by cluster", async () => {
    const { session: s } = session([2, 0, 1]);
    await s.load();
    expect(s.clusters.map((c) => c.clusterId)).toEqual([0, 1, 2]);
    expect(s.clusters[0].items).toHaveLength(5);
  });

  it("requires every sampled id before a cluster is submittable", async () => {
    const { session: s } = session([0]);
    await s.load();
    const ids = s.clusters[0].items.map((i) => i.sample_id);
    for (const sid of ids.slice(0, 4)) s.mark(sid, 1);
    expect(s.isComplete(0)).toBe(false);
    expect(() => s.buildPayload(0)).toThrow(/unmarked/);
    s.mark(ids[4], 0);
    expect(s.isComplete(0)).toBe(true);
  });

  it("mirrors the strong/mixed/discard thresholds as an advisory badge", async () => {
    expect(bucketPreview([1, 1, 1, 1, 1])).toBe("strong");
    expect(bucketPreview([1, 1, 1, 1, 0])).toBe("strong"); // 0.8 boundary
    expect(bucketPreview([1, 1, 1, 0, 0])).toBe("mixed");
    expect(bucketPreview([1, 0, 0, 0, 0])).toBe("discard"); // 0.2 boundary
    const { session: s } = session([0]);
    await s.load();
    for (const item of s.clusters[0].items) s.mark(item.sample_id, 1);
    expect(s.preview(0)).toBe("strong");
  });

  it("posts labels only, never scores", async () => {
    const { session: s, posts } = session([0]);
    await s.load();
    for (const item of s.clusters[0].items) s.mark(item.sample_id, 1);
    await s.submit(0);
    expect(posts).toHaveLength(1);
    const body = posts[0].body as {
      kind: string;
      items: Record<string, unknown>[];
    };
    expect(body.kind).toBe("triage");
    for (const item of body.items) {
      expect(Object.keys(item).sort()).toEqual(["relevance", "sample_id"]);
    }
  });

  it("locks a cluster locally after submission", async () => {
    const { session: s } = session([0]);
    await s.load();
    const ids = s.clusters[0].items.map((i) => i.sample_id);
    for (const sid of ids) s.mark(sid, 1);
    await s.submit(0);
    expect(s.isSubmitted(0)).toBe(true);
    expect(() => s.mark(ids[0], 0)).toThrow(/already submitted/);
  });

  it("persists partial marks and restores them on reload", async () => {
    const store = new MemoryStore();
    const first = session([0], store);
    await first.session.load();
    const ids = first.session.clusters[0].items.map((i) => i.sample_id);
    first.session.mark(ids[0], 1);
    first.session.mark(ids[1], 0);

    const second = session([0], store);
    await second.session.load();
    expect(second.session.clusters[0].marks.get(ids[0])).toBe(1);
    expect(second.session.clusters[0].marks.get(ids[1])).toBe(0);
  });

  it("submitAllComplete only submits fully marked clusters", async () => {
    const { session: s, posts } = session([0, 1]);
    await s.load();
    for (const item of s.clusters[0].items) s.mark(item.sample_id, 1);
    s.mark(s.clusters[1].items[0].sample_id, 0);
    const accepted = await s.submitAllComplete();
    expect(posts).toHaveLength(1);
    expect(accepted).toBe(1);
    expect(s.isSubmitted(0)).toBe(true);
    expect(s.isSubmitted(1)).toBe(false);
  });
});
