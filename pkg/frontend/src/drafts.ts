/** Local draft persistence: unsaved labels survive reloads and network drops,
 * and are cleared only when the server accepts a submission. */

import type { Label } from "./types.js";

/** localStorage-compatible subset, injectable for tests and non-browser use. */
export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export class MemoryStorage implements StorageLike {
  private map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.has(key) ? this.map.get(key)! : null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
  removeItem(key: string): void {
    this.map.delete(key);
  }
}

const PREFIX = "ragprobe-draft:";

export class DraftStore {
  constructor(private storage: StorageLike) {}

  save(taskId: string, labels: Map<string, Label>): void {
    this.storage.setItem(
      PREFIX + taskId,
      JSON.stringify(Array.from(labels.entries())),
    );
  }

  load(taskId: string): Map<string, Label> {
    const raw = this.storage.getItem(PREFIX + taskId);
    if (raw === null) return new Map();
    try {
      return new Map(JSON.parse(raw) as [string, Label][]);
    } catch {
      return new Map(); // corrupt draft: start clean rather than crash
    }
  }

  clear(taskId: string): void {
    this.storage.removeItem(PREFIX + taskId);
  }
}
