/**
 * Client-side timeline draft. Mirrors the server's token rules (ages are
 * integers 0..120, concepts come from vocabulary search) and serialises to
 * the URL hash so a probe session is shareable as a link.
 */

import type { TokenSpec } from "./api";

export class TimelineDraft {
  tokens: TokenSpec[] = [];
  private listeners: Array<() => void> = [];

  subscribe(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  get empty(): boolean {
    return this.tokens.length === 0;
  }

  addAge(value: string): string | null {
    if (!/^\d+$/.test(value.trim())) return "age must be a whole number";
    const age = Number(value.trim());
    if (age < 0 || age > 120) return "age must be between 0 and 120";
    this.tokens.push({ kind: "AGE", value: String(age) });
    this.emit();
    return null;
  }

  addConcept(code: string): void {
    this.tokens.push({ kind: "CONCEPT", value: code });
    this.emit();
  }

  removeAt(index: number): void {
    this.tokens.splice(index, 1);
    this.emit();
  }

  move(index: number, delta: number): void {
    const target = index + delta;
    if (target < 0 || target >= this.tokens.length) return;
    const [tok] = this.tokens.splice(index, 1);
    this.tokens.splice(target, 0, tok);
    this.emit();
  }

  clear(): void {
    this.tokens = [];
    this.emit();
  }

  /** Compact hash form: a<age> or c<code>, joined by "~". */
  toHash(): string {
    return this.tokens
      .map((t) =>
        t.kind === "AGE"
          ? `a${t.value}`
          : `c${encodeURIComponent(t.value)}`,
      )
      .join("~");
  }

  static fromHash(hash: string): TimelineDraft {
    const draft = new TimelineDraft();
    const body = hash.replace(/^#/, "");
    if (!body) return draft;
    for (const part of body.split("~")) {
      if (part.startsWith("a")) {
        draft.tokens.push({ kind: "AGE", value: part.slice(1) });
      } else if (part.startsWith("c")) {
        draft.tokens.push({
          kind: "CONCEPT",
          value: decodeURIComponent(part.slice(1)),
        });
      }
    }
    return draft;
  }
}
