// Keyboard-first labeling: 1/0 mark relevance in triage, letter keys pick
// classes, space advances, enter submits.

import { LabelClass } from "./types.js";

export type KeyAction =
  | { kind: "mark"; relevance: 0 | 1 }
  | { kind: "class"; classId: string }
  | { kind: "next" }
  | { kind: "previous" }
  | { kind: "submit" }
  | { kind: "none" };

export function assignHotkeys(classes: { id: string; name: string }[]): LabelClass[] {
  const used = new Set<string>();
  return classes.map((c) => {
    let hotkey = c.id.toLowerCase()[0];
    if (used.has(hotkey)) {
      hotkey = [...c.name.toLowerCase()].find((ch) => /[a-z]/.test(ch) && !used.has(ch)) ?? "";
    }
    if (hotkey) used.add(hotkey);
    return { id: c.id, name: c.name, hotkey };
  });
}

export function resolveKey(key: string, classes: LabelClass[]): KeyAction {
  if (key === "1") return { kind: "mark", relevance: 1 };
  if (key === "0") return { kind: "mark", relevance: 0 };
  if (key === "ArrowRight" || key === " ") return { kind: "next" };
  if (key === "ArrowLeft") return { kind: "previous" };
  if (key === "Enter") return { kind: "submit" };
  const match = classes.find((c) => c.hotkey === key.toLowerCase());
  if (match) return { kind: "class", classId: match.id };
  return { kind: "none" };
}
