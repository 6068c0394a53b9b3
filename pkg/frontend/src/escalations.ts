// Escalation labeling: conflict / low-alignment / boundary items, one class
// label per sample. Boundary items arrive with the engine's attributed
// class, which is preselected so a reviewer can confirm with a single key.

import { ReviewApiClient } from "./api.js";
import { EscalationItem, LabelClass, ResolutionPost } from "./types.js";

export class EscalationSession {
  items: EscalationItem[] = [];
  private labels = new Map<string, string>();

  constructor(
    private readonly api: ReviewApiClient,
    private readonly annotator: string,
    readonly classes: LabelClass[]
  ) {}

  async load(): Promise<void> {
    const queue = await this.api.escalationQueue();
    this.items = queue.items;
    this.labels.clear();
  }

  /** Preselected label for an item: boundary attribution when present. */
  preselected(item: EscalationItem): string | null {
    if (item.attributed_class && this.classes.some((c) => c.id === item.attributed_class)) {
      return item.attributed_class;
    }
    return null;
  }

  setLabel(sampleId: string, classId: string): void {
    if (!this.items.some((i) => i.sample_id === sampleId)) {
      throw new Error(`sample ${sampleId} is not escalated`);
    }
    if (!this.classes.some((c) => c.id === classId)) {
      throw new Error(`unknown class ${classId}`);
    }
    this.labels.set(sampleId, classId);
  }

  labeled(): number {
    return this.labels.size;
  }

  buildPayload(): ResolutionPost {
    if (this.labels.size === 0) throw new Error("nothing labeled yet");
    return {
      kind: "escalation",
      annotator: this.annotator,
      items: [...this.labels.entries()].map(([sample_id, label]) => ({
        sample_id,
        label,
      })),
    };
  }

  async submit(): Promise<number> {
    const accepted = await this.api.postResolutions(this.buildPayload());
    for (const sid of this.labels.keys()) {
      this.items = this.items.filter((i) => i.sample_id !== sid);
    }
    this.labels.clear();
    return accepted;
  }
}
