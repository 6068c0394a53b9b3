// In-memory transport double for the review API.

import { FetchLike } from "../src/api.js";

export interface RecordedPost {
  url: string;
  body: unknown;
}

export function fakeTransport(
  routes: Record<string, unknown>,
  posts: RecordedPost[] = [],
  postResponse: unknown = { accepted: 1 }
): { fetchFn: FetchLike; posts: RecordedPost[] } {
  const fetchFn: FetchLike = async (url, init) => {
    if (init?.method === "POST") {
      posts.push({ url, body: JSON.parse(init.body ?? "null") });
      return { ok: true, status: 200, json: async () => postResponse };
    }
    const path = new URL(url).pathname;
    if (path in routes) {
      return { ok: true, status: 200, json: async () => routes[path] };
    }
    return { ok: false, status: 404, json: async () => ({ error: `no route ${path}` }) };
  };
  return { fetchFn, posts };
}

export const hex = (n: number): string => n.toString(16).padStart(32, "0");

export function triageQueue(clusters: number[], perCluster = 5) {
  let counter = 0;
  const items = clusters.flatMap((clusterId) =>
    Array.from({ length: perCluster }, () => ({
      sample_id: hex(counter++),
      cluster_id: clusterId,
      image_path: `images/${hex(counter)}.png`,
    }))
  );
  return {
    kind: "triage",
    round: 0,
    items,
    clusters: clusters.map((cluster_id) => ({ cluster_id, pending: perCluster })),
  };
}
