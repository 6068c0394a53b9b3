// Headless triage driver: fetches the pending triage queue from a running
// review API, marks every sample with a scripted relevance rule, and posts
// the resolutions cluster by cluster. Used by the cross-stack contract
// test; also handy for smoke-testing a live engine.
//
//   REVIEW_API_URL=http://127.0.0.1:8610 \
//   TRIAGE_IRRELEVANT_CLUSTERS=2,5 node dist/scripts/headless_triage.js

import { ReviewApiClient } from "../src/api.js";
import { TriageSession } from "../src/triage.js";
import { MemoryStore } from "../src/storage.js";

async function main(): Promise<void> {
  const baseUrl = process.env.REVIEW_API_URL;
  if (!baseUrl) {
    console.error("REVIEW_API_URL is required");
    process.exit(2);
  }
  const irrelevant = new Set(
    (process.env.TRIAGE_IRRELEVANT_CLUSTERS ?? "")
      .split(",")
      .filter((s) => s.length > 0)
      .map((s) => Number.parseInt(s, 10))
  );
  const annotator = process.env.ANNOTATOR ?? "headless-driver";

  const api = new ReviewApiClient(baseUrl);
  const session = new TriageSession(api, annotator, new MemoryStore());
  await session.load();

  if (session.clusters.length === 0) {
    console.log("triage queue is empty; nothing to do");
    return;
  }
  for (const cluster of session.clusters) {
    const relevance = irrelevant.has(cluster.clusterId) ? 0 : 1;
    for (const item of cluster.items) {
      session.mark(item.sample_id, relevance as 0 | 1);
    }
    const preview = session.preview(cluster.clusterId);
    console.log(
      `cluster ${cluster.clusterId}: marked ${cluster.items.length} samples ` +
        `as ${relevance} (preview: ${preview})`
    );
  }
  const accepted = await session.submitAllComplete();
  console.log(`submitted ${accepted} triage labels to ${baseUrl}`);
}

main().catch((error) => {
  console.error(error);
  process.exit(1);
});
