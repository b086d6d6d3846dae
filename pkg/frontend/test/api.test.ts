import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { FakeServer, relevanceTask } from "./fakeServer.js";

function setup() {
  const server = new FakeServer();
  server.addAnnotator("ann1", "tok1");
  const client = new ApiClient("http://fake", "tok1", server.fetch);
  return { server, client };
}

describe("ApiClient", () => {
  it("claims the oldest open task for the stage", async () => {
    const { server, client } = setup();
    server.addTask(relevanceTask("t1", 2, 2));
    server.addTask(relevanceTask("t2", 2, 2));
    const task = await client.claimNext("relevance");
    expect(task?.task_id).toBe("t1");
  });

  it("returns null when the queue is empty", async () => {
    const { client } = setup();
    expect(await client.claimNext("relevance")).toBeNull();
  });

  it("sends the bearer token and surfaces 401 as ApiError", async () => {
    const server = new FakeServer();
    server.addAnnotator("ann1", "tok1");
    const bad = new ApiClient("http://fake", "wrong-token", server.fetch);
    await expect(bad.claimNext("relevance")).rejects.toMatchObject({
      status: 401,
      detail: "unknown token",
    });
  });

  it("posts labels and parses the receipt", async () => {
    const { server, client } = setup();
    server.addTask(relevanceTask("t1", 1, 1));
    const receipt = await client.submitLabels("t1", [
      { passage_id: "p0", statement_id: "s0", level: "full" },
    ]);
    expect(receipt.status).toBe("accepted");
    expect(server.submissionsFor("t1").get("ann1")).toEqual([
      { passage_id: "p0", statement_id: "s0", level: "full" },
    ]);
  });

  it("raises ApiError with the server detail on 409", async () => {
    const { server, client } = setup();
    server.addTask(relevanceTask("t1", 1, 1));
    const labels = [{ passage_id: "p0", statement_id: "s0", level: "full" as const }];
    await client.submitLabels("t1", labels);
    await expect(client.submitLabels("t1", labels)).rejects.toSatisfy(
      (err) => err instanceof ApiError && err.status === 409,
    );
  });

  it("propagates network failures unchanged", async () => {
    const { server, client } = setup();
    server.offline = true;
    await expect(client.claimNext("relevance")).rejects.toBeInstanceOf(TypeError);
  });
});
