// Cluster triage flow: N_per thumbnails per cluster, 1/0 relevance keys,
// a cluster becomes submittable only when every sampled item is marked.
//
// The strong/mixed/discard badge shown next to a cluster mirrors the
// engine's bucket thresholds but is purely an advisory preview — the
// engine recomputes the authoritative score from the posted labels.

import { ReviewApiClient } from "./api.js";
import { KeyValueStore, MemoryStore, loadJson, saveJson } from "./storage.js";
import { ResolutionPost, TriageItem, TriageQueue } from "./types.js";

export type Relevance = 0 | 1;

export type BucketPreview = "strong" | "mixed" | "discard";

export const STRONG_MIN = 0.8;
export const DISCARD_MAX = 0.2;

export function bucketPreview(marks: Relevance[]): BucketPreview {
  const score = marks.reduce<number>((acc, m) => acc + m, 0) / marks.length;
  if (score >= STRONG_MIN) return "strong";
  if (score <= DISCARD_MAX) return "discard";
  return "mixed";
}

export interface ClusterView {
  clusterId: number;
  items: TriageItem[];
  marks: Map<string, Relevance>;
}

export class TriageSession {
  readonly clusters: ClusterView[] = [];
  round: number | null = null;
  private submitted = new Set<number>();

  constructor(
    private readonly api: ReviewApiClient,
    private readonly annotator: string,
    private readonly store: KeyValueStore = new MemoryStore()
  ) {}

  private storageKey(): string {
    return `triage:${this.round ?? "none"}:${this.annotator}`;
  }

  async load(): Promise<void> {
    const queue: TriageQueue = await this.api.triageQueue();
    this.round = queue.round;
    this.clusters.length = 0;
    const byCluster = new Map<number, TriageItem[]>();
    for (const item of queue.items) {
      const bucket = byCluster.get(item.cluster_id) ?? [];
      bucket.push(item);
      byCluster.set(item.cluster_id, bucket);
    }
    for (const clusterId of [...byCluster.keys()].sort((a, b) => a - b)) {
      this.clusters.push({
        clusterId,
        items: byCluster.get(clusterId) as TriageItem[],
        marks: new Map(),
      });
    }
    const saved = loadJson<Record<string, Relevance>>(this.store, this.storageKey());
    if (saved) {
      for (const cluster of this.clusters) {
        for (const item of cluster.items) {
          const mark = saved[item.sample_id];
          if (mark === 0 || mark === 1) cluster.marks.set(item.sample_id, mark);
        }
      }
    }
  }

  mark(sampleId: string, relevance: Relevance): void {
    const cluster = this.clusters.find((c) =>
      c.items.some((i) => i.sample_id === sampleId)
    );
    if (!cluster) throw new Error(`sample ${sampleId} is not in the triage queue`);
    if (this.submitted.has(cluster.clusterId)) {
      throw new Error(`cluster ${cluster.clusterId} is already submitted`);
    }
    cluster.marks.set(sampleId, relevance);
    this.persist();
  }

  private persist(): void {
    const flat: Record<string, Relevance> = {};
    for (const cluster of this.clusters) {
      for (const [sid, mark] of cluster.marks) flat[sid] = mark;
    }
    saveJson(this.store, this.storageKey(), flat);
  }

  isComplete(clusterId: number): boolean {
    const cluster = this.clusters.find((c) => c.clusterId === clusterId);
    if (!cluster) return false;
    return cluster.items.every((i) => cluster.marks.has(i.sample_id));
  }

  isSubmitted(clusterId: number): boolean {
    return this.submitted.has(clusterId);
  }

  preview(clusterId: number): BucketPreview | null {
    const cluster = this.clusters.find((c) => c.clusterId === clusterId);
    if (!cluster || !this.isComplete(clusterId)) return null;
    return bucketPreview(
      cluster.items.map((i) => cluster.marks.get(i.sample_id) as Relevance)
    );
  }

  /** Resolution payload for one fully marked cluster: labels only. */
  buildPayload(clusterId: number): ResolutionPost {
    const cluster = this.clusters.find((c) => c.clusterId === clusterId);
    if (!cluster) throw new Error(`unknown cluster ${clusterId}`);
    if (!this.isComplete(clusterId)) {
      throw new Error(`cluster ${clusterId} still has unmarked samples`);
    }
    return {
      kind: "triage",
      annotator: this.annotator,
      items: cluster.items.map((i) => ({
        sample_id: i.sample_id,
        relevance: cluster.marks.get(i.sample_id) as Relevance,
      })),
    };
  }

  /** Submit one cluster; locally read-only afterwards. */
  async submit(clusterId: number): Promise<number> {
    const payload = this.buildPayload(clusterId);
    const accepted = await this.api.postResolutions(payload);
    this.submitted.add(clusterId);
    return accepted;
  }

  async submitAllComplete(): Promise<number> {
    let total = 0;
    for (const cluster of this.clusters) {
      if (this.isComplete(cluster.clusterId) && !this.submitted.has(cluster.clusterId)) {
        total += await this.submit(cluster.clusterId);
      }
    }
    return total;
  }
}
