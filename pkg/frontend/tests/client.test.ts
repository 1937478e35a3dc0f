import { describe, expect, it } from "vitest";

import { AnnotationClient, SubmitRejected, Task } from "../src/client.js";

const TASK: Task = {
  task_id: "t1",
  image_id: "img.png",
  keypoint: [10, 12],
  focal_length_px: 120,
};

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("annotation client", () => {
  it("fetches the next task", async () => {
    const client = new AnnotationClient("http://svc", "w1", async (url) => {
      expect(url).toBe("http://svc/api/task?worker=w1");
      return jsonResponse({ task: TASK });
    });
    const task = await client.nextTask();
    expect(task?.task_id).toBe("t1");
  });

  it("reports no-task as null", async () => {
    const client = new AnnotationClient("http://svc", "w1", async () =>
      jsonResponse({ task: null }),
    );
    expect(await client.nextTask()).toBeNull();
  });

  it("submits a normal with a client-generated response id", async () => {
    const bodies: any[] = [];
    const client = new AnnotationClient("http://svc", "w1", async (_url, init) => {
      bodies.push(JSON.parse(String(init?.body)));
      return jsonResponse({ seq: 1, status: "pending" });
    });
    const ack = await client.submitNormal(TASK, [0, 0, -1], 7.5);
    expect(ack?.seq).toBe(1);
    expect(bodies[0].response_id).toBeTruthy();
    expect(bodies[0].normal).toEqual([0, 0, -1]);
    expect(bodies[0].hard_to_tell).toBe(false);
  });

  it("queues on network failure and retries with the same response id", async () => {
    let online = false;
    const bodies: any[] = [];
    const client = new AnnotationClient("http://svc", "w1", async (_url, init) => {
      if (!online) throw new TypeError("network down");
      bodies.push(JSON.parse(String(init?.body)));
      return jsonResponse({ seq: 5, status: "pending" });
    });

    const ack = await client.submitNormal(TASK, [0, 0, -1], 3);
    expect(ack).toBeNull();
    expect(client.pendingCount).toBe(1);

    // Still offline: flush keeps the item queued.
    expect(await client.flushQueue()).toEqual([]);
    expect(client.pendingCount).toBe(1);

    online = true;
    const acked = await client.flushQueue();
    expect(acked).toEqual([{ seq: 5, status: "pending" }]);
    expect(client.pendingCount).toBe(0);
    expect(bodies[0].response_id).toBeTruthy();
  });

  it("surfaces server rejections without retrying", async () => {
    const client = new AnnotationClient("http://svc", "w1", async () =>
      new Response("conflict", { status: 409 }),
    );
    await expect(client.submitNormal(TASK, [0, 0, -1], 2)).rejects.toThrow(SubmitRejected);
    expect(client.pendingCount).toBe(0);
  });

  it("submits hard-to-tell without a normal", async () => {
    const bodies: any[] = [];
    const client = new AnnotationClient("http://svc", "w1", async (_url, init) => {
      bodies.push(JSON.parse(String(init?.body)));
      return jsonResponse({ seq: 2, status: "pending" });
    });
    await client.submitHardToTell(TASK, 1.25);
    expect(bodies[0].normal).toBeNull();
    expect(bodies[0].hard_to_tell).toBe(true);
  });

  it("builds image urls from the task", () => {
    const client = new AnnotationClient("http://svc/", "w1", async () => jsonResponse({}));
    expect(client.imageUrl(TASK)).toBe("http://svc/api/image/img.png");
  });
});

describe("offline queue persistence", () => {
  function fakeStorage(): { store: Map<string, string> } & {
    getItem(k: string): string | null;
    setItem(k: string, v: string): void;
  } {
    const store = new Map<string, string>();
    return {
      store,
      getItem: (k) => store.get(k) ?? null,
      setItem: (k, v) => void store.set(k, v),
    };
  }

  it("queued responses survive a reload and keep their response id", async () => {
    const storage = fakeStorage();
    const offline = new AnnotationClient("http://svc", "w1", async () => {
      throw new TypeError("network down");
    }, storage);
    await offline.submitNormal(TASK, [0, 0, -1], 4);
    expect(offline.pendingCount).toBe(1);
    const queuedId = JSON.parse(storage.store.get("gauge-queue-w1")!)[0].body.response_id;

    // "Reload": a fresh client over the same storage picks the queue up.
    const bodies: any[] = [];
    const reloaded = new AnnotationClient("http://svc", "w1", async (_url, init) => {
      bodies.push(JSON.parse(String(init?.body)));
      return new Response(JSON.stringify({ seq: 9, status: "pending" }), { status: 200 });
    }, storage);
    expect(reloaded.pendingCount).toBe(1);
    const acked = await reloaded.flushQueue();
    expect(acked).toHaveLength(1);
    expect(bodies[0].response_id).toBe(queuedId);
    expect(reloaded.pendingCount).toBe(0);
    expect(storage.store.get("gauge-queue-w1")).toBe("[]");
  });
});
