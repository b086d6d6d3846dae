import { describe, expect, it } from "vitest";

import { DraftStore, MemoryStorage } from "../src/drafts.js";
import type { Label } from "../src/types.js";

describe("DraftStore", () => {
  it("round-trips a label map", () => {
    const store = new DraftStore(new MemoryStorage());
    const labels = new Map<string, Label>([
      ["p0|s0", { passage_id: "p0", statement_id: "s0", level: "full" }],
      ["p0|s1", { passage_id: "p0", statement_id: "s1", level: "none" }],
    ]);
    store.save("t1", labels);
    expect(store.load("t1")).toEqual(labels);
  });

  it("survives a reload (new DraftStore over the same storage)", () => {
    const storage = new MemoryStorage();
    new DraftStore(storage).save("t1", new Map([["k", { verdict: true }]]));
    expect(new DraftStore(storage).load("t1").get("k")).toEqual({ verdict: true });
  });

  it("is empty for unknown tasks and after clear", () => {
    const store = new DraftStore(new MemoryStorage());
    expect(store.load("missing").size).toBe(0);
    store.save("t1", new Map([["k", { verdict: false }]]));
    store.clear("t1");
    expect(store.load("t1").size).toBe(0);
  });

  it("keeps drafts isolated per task", () => {
    const store = new DraftStore(new MemoryStorage());
    store.save("t1", new Map([["k", { verdict: true }]]));
    store.save("t2", new Map([["k", { verdict: false }]]));
    store.clear("t1");
    expect(store.load("t2").get("k")).toEqual({ verdict: false });
  });

  it("treats a corrupt draft as empty instead of crashing", () => {
    const storage = new MemoryStorage();
    storage.setItem("ragprobe-draft:t1", "{not json");
    expect(new DraftStore(storage).load("t1").size).toBe(0);
  });
});
