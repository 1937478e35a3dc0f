/**
 * End-to-end: two simulated workers annotate through the UI modules against
 * the real annotation service over HTTP.
 *
 * Requires the backend package to be installed (python3 -c "import snowtools").
 */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationClient, Task } from "../src/client.js";
import { normalToState, stateToNormal, Vec3 } from "../src/gauge.js";

let child: ChildProcess | null = null;
let baseUrl = "";

function tiltedNormal(thetaDeg: number, phiDeg = 0): Vec3 {
  const t = (thetaDeg * Math.PI) / 180;
  const p = (phiDeg * Math.PI) / 180;
  return [Math.sin(t) * Math.cos(p), Math.sin(t) * Math.sin(p), -Math.cos(t)];
}

async function waitForHealth(url: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${url}/api/health`);
      if (res.ok) return;
    } catch (err) {
      lastError = err;
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error(`service did not come up at ${url}: ${lastError}`);
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "gauge-e2e-"));
  const tasks = ["t-accept", "t-reject"].map((id) =>
    JSON.stringify({
      kind: "task",
      task_id: id,
      image_id: `${id}.png`,
      keypoint: [100, 120],
      focal_length_px: 150.0,
    }),
  );
  writeFileSync(join(dir, "tasks.jsonl"), tasks.join("\n") + "\n");
  const port = 18700 + Math.floor(Math.random() * 800);
  writeFileSync(
    join(dir, "server.conf"),
    `data_dir = ${dir}\nport = ${port}\ngold_rate = 0\nseed = 0\n`,
  );

  child = spawn("python3", ["-m", "snowtools.cli", "serve", "--config", join(dir, "server.conf")], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  child.stderr?.on("data", () => undefined);
  child.stdout?.on("data", () => undefined);
  baseUrl = `http://127.0.0.1:${port}`;
  await waitForHealth(baseUrl, 20_000);
}, 30_000);

afterAll(() => {
  child?.kill("SIGTERM");
});

describe("two workers through the gauge UI", () => {
  it("agreeing pair is accepted, disagreeing pair rejected", async () => {
    // Worker intents per task: within 30 degrees on t-accept, far apart on
    // t-reject. Each worker drives the gauge state exactly as the UI does:
    // vector -> sliders -> submitted normal.
    const intents: Record<string, [Vec3, Vec3]> = {
      "t-accept": [tiltedNormal(5), tiltedNormal(25)],
      "t-reject": [tiltedNormal(0), tiltedNormal(50)],
    };

    for (let w = 0; w < 2; w++) {
      const client = new AnnotationClient(baseUrl, `worker-${w}`);
      for (;;) {
        const task: Task | null = await client.nextTask();
        if (!task) break;
        const wanted = intents[task.task_id]![w]!;
        const submitted = stateToNormal(normalToState(wanted)); // through the sliders
        const ack = await client.submitNormal(task, submitted, 2.0 + w);
        expect(ack).not.toBeNull();
      }
    }

    const res = await fetch(`${baseUrl}/api/export?status=all`);
    expect(res.ok).toBe(true);
    const lines = (await res.text()).trim().split("\n").map((l) => JSON.parse(l));
    const byTask = Object.fromEntries(lines.map((r) => [r.task_id, r]));

    expect(byTask["t-accept"].status).toBe("accepted");
    expect(byTask["t-reject"].status).toBe("rejected");
    // The accepted normal is the renormalized average: unit length, between
    // the two worker answers.
    const n = byTask["t-accept"].normal as [number, number, number];
    expect(Math.hypot(n[0], n[1], n[2])).toBeCloseTo(1, 9);
    expect(byTask["t-accept"].disagreement_deg).toBeCloseTo(20, 1);
  }, 30_000);

  it("consistency endpoint reflects the submitted pairs", async () => {
    const res = await fetch(`${baseUrl}/api/consistency`);
    expect(res.ok).toBe(true);
    const rep = await res.json();
    expect(rep.per_task["t-accept"].hhd_deg).toBeCloseTo(10, 1);
    expect(rep.per_task["t-reject"].hhd_deg).toBeCloseTo(25, 1);
  });

  it("a worker never sees an answered task again", async () => {
    const client = new AnnotationClient(baseUrl, "worker-0");
    expect(await client.nextTask()).toBeNull();
  });
});
