// Wire types for the engine's review API, with zod schemas so every
// payload we send (and queue we receive) is validated against the contract.

import { z } from "zod";

export const TriageItemSchema = z.object({
  sample_id: z.string().regex(/^[0-9a-f]{32}$/),
  cluster_id: z.number().int(),
  image_path: z.string(),
});

export const TriageQueueSchema = z.object({
  kind: z.literal("triage"),
  round: z.number().int().nullable(),
  items: z.array(TriageItemSchema),
  clusters: z.array(
    z.object({ cluster_id: z.number().int(), pending: z.number().int() })
  ),
});

export const EscalationItemSchema = z.object({
  round: z.number().int(),
  sample_id: z.string().regex(/^[0-9a-f]{32}$/),
  reason: z.enum(["conflict", "low_fas", "boundary"]),
  attributed_class: z.string().nullable(),
  score: z.number().nullable(),
});

export const EscalationQueueSchema = z.object({
  kind: z.literal("escalation"),
  items: z.array(EscalationItemSchema),
});

export const RelabelItemSchema = z.object({
  sample_id: z.string().regex(/^[0-9a-f]{32}$/),
  coarse_label: z.string(),
  proposed_category: z.string(),
  traces: z.array(z.string()),
});

export const RelabelQueueSchema = z.object({
  kind: z.literal("relabel"),
  items: z.array(RelabelItemSchema),
});

export const RoundStateSchema = z.object({
  round: z.number().int(),
  stage: z.enum(["filter", "distill", "relabel"]),
  counts: z.record(z.string(), z.number().int()),
  config_hash: z.string(),
  rng_seed: z.number(),
});

// Resolutions carry labels only — never scores. The engine recomputes all
// authoritative quantities; anything the UI shows is an advisory preview.
export const TriageResolutionItemSchema = z
  .object({
    sample_id: z.string().regex(/^[0-9a-f]{32}$/),
    relevance: z.union([z.literal(0), z.literal(1)]),
  })
  .strict();

export const LabelResolutionItemSchema = z
  .object({
    sample_id: z.string().regex(/^[0-9a-f]{32}$/),
    label: z.string().min(1),
  })
  .strict();

export const ResolutionPostSchema = z.discriminatedUnion("kind", [
  z
    .object({
      kind: z.literal("triage"),
      annotator: z.string().min(1),
      items: z.array(TriageResolutionItemSchema).min(1),
    })
    .strict(),
  z
    .object({
      kind: z.literal("escalation"),
      annotator: z.string().min(1),
      items: z.array(LabelResolutionItemSchema).min(1),
    })
    .strict(),
  z
    .object({
      kind: z.literal("relabel"),
      annotator: z.string().min(1),
      items: z.array(LabelResolutionItemSchema).min(1),
    })
    .strict(),
]);

export type TriageItem = z.infer<typeof TriageItemSchema>;
export type TriageQueue = z.infer<typeof TriageQueueSchema>;
export type EscalationItem = z.infer<typeof EscalationItemSchema>;
export type EscalationQueue = z.infer<typeof EscalationQueueSchema>;
export type RelabelItem = z.infer<typeof RelabelItemSchema>;
export type RelabelQueue = z.infer<typeof RelabelQueueSchema>;
export type RoundState = z.infer<typeof RoundStateSchema>;
export type ResolutionPost = z.infer<typeof ResolutionPostSchema>;

export interface LabelClass {
  id: string;
  name: string;
  hotkey: string;
}
