// Browser entry point: a minimal three-tab review app over the session
// state machines. All decision logic lives in the session classes; this
// file only renders and forwards keystrokes.

import { ApiError, ReviewApiClient } from "./api.js";
import { EscalationSession } from "./escalations.js";
import { assignHotkeys, resolveKey } from "./keyboard.js";
import { RelabelSession } from "./relabel.js";
import { TriageSession } from "./triage.js";
import { LabelClass } from "./types.js";

type Tab = "triage" | "escalations" | "relabel";

interface AppConfig {
  apiUrl: string;
  annotator: string;
  classes: LabelClass[];
  guidelines: string;
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

class App {
  private api: ReviewApiClient;
  private triage: TriageSession;
  private escalations: EscalationSession;
  private relabel: RelabelSession;
  private tab: Tab = "triage";
  private cursor = 0;
  private root: HTMLElement;
  private banner: HTMLElement;

  constructor(private readonly config: AppConfig, mount: HTMLElement) {
    this.api = new ReviewApiClient(config.apiUrl);
    this.triage = new TriageSession(this.api, config.annotator, window.localStorage);
    this.escalations = new EscalationSession(this.api, config.annotator, config.classes);
    this.relabel = new RelabelSession(this.api, config.annotator, config.classes);
    this.banner = el("div", "banner");
    this.root = el("div", "app");
    mount.append(this.banner, this.root);
    document.addEventListener("keydown", (event) => this.onKey(event.key));
  }

  async start(): Promise<void> {
    await this.reload();
  }

  private async reload(): Promise<void> {
    this.banner.textContent = "";
    try {
      await Promise.all([
        this.triage.load(),
        this.escalations.load(),
        this.relabel.load(),
      ]);
    } catch (error) {
      this.banner.textContent = `queue load failed: ${String(error)} — refresh to retry`;
    }
    this.render();
  }

  private async onKey(key: string): Promise<void> {
    const action = resolveKey(key, this.config.classes);
    try {
      if (this.tab === "triage" && action.kind === "mark") {
        const items = this.triage.clusters.flatMap((c) => c.items);
        const item = items[this.cursor];
        if (item) {
          this.triage.mark(item.sample_id, action.relevance);
          this.cursor = Math.min(this.cursor + 1, items.length - 1);
        }
      } else if (this.tab === "escalations" && action.kind === "class") {
        const item = this.escalations.items[this.cursor];
        if (item) this.escalations.setLabel(item.sample_id, action.classId);
      } else if (this.tab === "relabel" && action.kind === "class") {
        const item = this.relabel.items[this.cursor];
        if (item) this.relabel.choose(item.sample_id, action.classId);
      } else if (action.kind === "next") {
        this.cursor += 1;
      } else if (action.kind === "previous") {
        this.cursor = Math.max(0, this.cursor - 1);
      } else if (action.kind === "submit") {
        await this.submitCurrent();
      }
    } catch (error) {
      if (error instanceof ApiError && error.status === 400) {
        this.banner.textContent = `rejected (stale round?): ${error.message} — refresh`;
      } else {
        this.banner.textContent = String(error);
      }
    }
    this.render();
  }

  private async submitCurrent(): Promise<void> {
    if (this.tab === "triage") {
      const accepted = await this.triage.submitAllComplete();
      this.banner.textContent = `submitted ${accepted} triage labels`;
    } else if (this.tab === "escalations") {
      const accepted = await this.escalations.submit();
      this.banner.textContent = `submitted ${accepted} escalation labels`;
    } else {
      const accepted = await this.relabel.submit();
      this.banner.textContent = `submitted ${accepted} arbitrations`;
    }
    await this.reload();
  }

  setTab(tab: Tab): void {
    this.tab = tab;
    this.cursor = 0;
    this.render();
  }

  private render(): void {
    this.root.innerHTML = "";
    const tabs = el("nav", "tabs");
    for (const tab of ["triage", "escalations", "relabel"] as Tab[]) {
      const button = el("button", tab === this.tab ? "tab active" : "tab", tab);
      button.addEventListener("click", () => this.setTab(tab));
      tabs.append(button);
    }
    this.root.append(tabs);
    if (this.tab === "triage") this.renderTriage();
    else if (this.tab === "escalations") this.renderEscalations();
    else this.renderRelabel();
    const help = el(
      "footer",
      "help",
      "keys: 1/0 relevance · class letters label · space next · enter submit"
    );
    this.root.append(help);
    const guide = el("details", "guidelines");
    guide.append(el("summary", "", "annotation guidelines"));
    guide.append(el("pre", "", this.config.guidelines));
    this.root.append(guide);
  }

  private renderTriage(): void {
    for (const cluster of this.triage.clusters) {
      const section = el("section", "cluster");
      const badge = this.triage.preview(cluster.clusterId) ?? "pending";
      const locked = this.triage.isSubmitted(cluster.clusterId) ? " (submitted)" : "";
      section.append(
        el("h2", "", `cluster ${cluster.clusterId} — ${badge}${locked}`)
      );
      const grid = el("div", "grid");
      for (const item of cluster.items) {
        const card = el("figure", "card");
        const img = document.createElement("img");
        img.src = this.api.imageUrl(item.sample_id);
        img.alt = item.sample_id;
        const mark = cluster.marks.get(item.sample_id);
        card.append(
          img,
          el("figcaption", "", mark === undefined ? "unmarked" : mark ? "relevant" : "irrelevant")
        );
        grid.append(card);
      }
      section.append(grid);
      this.root.append(section);
    }
  }

  private renderEscalations(): void {
    for (const item of this.escalations.items) {
      const row = el("section", "escalation");
      const preset = this.escalations.preselected(item);
      row.append(
        el(
          "h2",
          "",
          `${item.sample_id.slice(0, 8)} · ${item.reason}` +
            (preset ? ` · suggested ${preset}` : "")
        )
      );
      const img = document.createElement("img");
      img.src = this.api.imageUrl(item.sample_id);
      row.append(img);
      this.root.append(row);
    }
  }

  private renderRelabel(): void {
    for (const item of this.relabel.items) {
      const { coarse, proposed } = this.relabel.candidates(item);
      const row = el("section", "relabel");
      row.append(
        el("h2", "", `${item.sample_id.slice(0, 8)} · engine ${coarse} vs region ${proposed}`)
      );
      const img = document.createElement("img");
      img.src = this.api.imageUrl(item.sample_id);
      row.append(img, el("p", "traces", item.traces.join(", ") || "no traces"));
      this.root.append(row);
    }
  }
}

export function boot(config: AppConfig): void {
  const mount = document.getElementById("app");
  if (!mount) throw new Error("missing #app mount point");
  const classes = assignHotkeys(config.classes);
  void new App({ ...config, classes }, mount).start();
}
