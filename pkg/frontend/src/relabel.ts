// Relabel arbitration: the distillation label and the region-evidence
// category are shown side by side; the reviewer picks the winner (or any
// other class). Region evidence overlays draw engine-provided pixel boxes
// verbatim; no geometry is computed client-side.

import { ReviewApiClient } from "./api.js";
import { LabelClass, RelabelItem, ResolutionPost } from "./types.js";

export interface ArbitrationChoice {
  sampleId: string;
  label: string;
}

export class RelabelSession {
  items: RelabelItem[] = [];
  private choices = new Map<string, string>();

  constructor(
    private readonly api: ReviewApiClient,
    private readonly annotator: string,
    readonly classes: LabelClass[]
  ) {}

  async load(): Promise<void> {
    const queue = await this.api.relabelQueue();
    this.items = queue.items;
    this.choices.clear();
  }

  /** The two candidate labels for side-by-side display. */
  candidates(item: RelabelItem): { coarse: string; proposed: string } {
    return { coarse: item.coarse_label, proposed: item.proposed_category };
  }

  choose(sampleId: string, label: string): void {
    if (!this.items.some((i) => i.sample_id === sampleId)) {
      throw new Error(`sample ${sampleId} is not queued for arbitration`);
    }
    if (!this.classes.some((c) => c.id === label)) {
      throw new Error(`unknown class ${label}`);
    }
    this.choices.set(sampleId, label);
  }

  buildPayload(): ResolutionPost {
    if (this.choices.size === 0) throw new Error("nothing arbitrated yet");
    return {
      kind: "relabel",
      annotator: this.annotator,
      items: [...this.choices.entries()].map(([sample_id, label]) => ({
        sample_id,
        label,
      })),
    };
  }

  async submit(): Promise<number> {
    const accepted = await this.api.postResolutions(this.buildPayload());
    this.choices.clear();
    return accepted;
  }
}

export interface RegionBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

/**
 * Scale an engine-provided pixel box into canvas coordinates. Pure scaling
 * only: the box geometry itself is never adjusted client-side.
 */
export function scaleBox(
  box: RegionBox,
  imageWidth: number,
  imageHeight: number,
  canvasWidth: number,
  canvasHeight: number
): RegionBox {
  const sx = canvasWidth / imageWidth;
  const sy = canvasHeight / imageHeight;
  return {
    x: box.x * sx,
    y: box.y * sy,
    w: box.w * sx,
    h: box.h * sy,
  };
}
