/**
 * HTTP client for the annotation service with an offline retry queue.
 *
 * Responses carry a client-generated id, so a retry after a network
 * failure is idempotent even when the original request actually landed.
 */

import type { Vec3 } from "./gauge.js";

export interface Task {
  task_id: string;
  image_id: string;
  keypoint: [number, number];
  focal_length_px: number;
}

export interface ResponseAck {
  seq: number;
  status: string;
}

export interface PendingResponse {
  body: Record<string, unknown>;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Minimal slice of the Web Storage API used for queue persistence. */
export interface QueueStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

function newId(): string {
  const rnd = globalThis.crypto?.randomUUID?.();
  return rnd ?? `r-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}

function defaultStorage(): QueueStorage | null {
  try {
    return (globalThis as { localStorage?: QueueStorage }).localStorage ?? null;
  } catch {
    return null; // storage blocked: queue lives in memory only
  }
}

export class AnnotationClient {
  readonly baseUrl: string;
  readonly workerId: string;
  private fetchImpl: FetchLike;
  private queue: PendingResponse[] = [];
  private storage: QueueStorage | null;

  constructor(baseUrl: string, workerId: string, fetchImpl?: FetchLike, storage?: QueueStorage) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.workerId = workerId;
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
    this.storage = storage ?? defaultStorage();
    this.restoreQueue();
  }

  get pendingCount(): number {
    return this.queue.length;
  }

  private get storageKey(): string {
    return `gauge-queue-${this.workerId}`;
  }

  private restoreQueue(): void {
    if (!this.storage) return;
    try {
      const raw = this.storage.getItem(this.storageKey);
      if (raw) this.queue = JSON.parse(raw) as PendingResponse[];
    } catch {
      this.queue = [];
    }
  }

  private persistQueue(): void {
    if (!this.storage) return;
    try {
      this.storage.setItem(this.storageKey, JSON.stringify(this.queue));
    } catch {
      // quota or privacy errors: keep the in-memory queue
    }
  }

  async nextTask(): Promise<Task | null> {
    const res = await this.fetchImpl(
      `${this.baseUrl}/api/task?worker=${encodeURIComponent(this.workerId)}`,
    );
    if (!res.ok) throw new Error(`task fetch failed: ${res.status}`);
    const body = (await res.json()) as { task: Task | null };
    return body.task;
  }

  imageUrl(task: Task): string {
    return `${this.baseUrl}/api/image/${encodeURIComponent(task.image_id)}`;
  }

  async submitNormal(task: Task, normal: Vec3, elapsedS: number): Promise<ResponseAck | null> {
    return this.submit({
      kind: "response",
      task_id: task.task_id,
      worker_id: this.workerId,
      normal: [normal[0], normal[1], normal[2]],
      hard_to_tell: false,
      elapsed_s: elapsedS,
      response_id: newId(),
    });
  }

  async submitHardToTell(task: Task, elapsedS: number): Promise<ResponseAck | null> {
    return this.submit({
      kind: "response",
      task_id: task.task_id,
      worker_id: this.workerId,
      normal: null,
      hard_to_tell: true,
      elapsed_s: elapsedS,
      response_id: newId(),
    });
  }

  /**
   * Post one response; on a network failure the body is kept (with its
   * response id) and retried by flushQueue. Returns null when queued.
   */
  private async submit(body: Record<string, unknown>): Promise<ResponseAck | null> {
    try {
      const res = await this.fetchImpl(`${this.baseUrl}/api/response`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
      if (!res.ok) {
        const detail = await res.text();
        throw new SubmitRejected(res.status, detail);
      }
      return (await res.json()) as ResponseAck;
    } catch (err) {
      if (err instanceof SubmitRejected) throw err; // server said no: not retryable
      this.queue.push({ body });
      this.persistQueue();
      return null;
    }
  }

  /** Retry queued submissions in order; stops at the first network failure. */
  async flushQueue(): Promise<ResponseAck[]> {
    const acked: ResponseAck[] = [];
    while (this.queue.length > 0) {
      const pending = this.queue[0]!;
      try {
        const res = await this.fetchImpl(`${this.baseUrl}/api/response`, {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(pending.body),
        });
        if (!res.ok) {
          const detail = await res.text();
          this.queue.shift();
          this.persistQueue();
          throw new SubmitRejected(res.status, detail);
        }
        acked.push((await res.json()) as ResponseAck);
        this.queue.shift();
        this.persistQueue();
      } catch (err) {
        if (err instanceof SubmitRejected) throw err;
        break; // still offline
      }
    }
    return acked;
  }
}

export class SubmitRejected extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(`submission rejected (${status}): ${detail}`);
    this.status = status;
  }
}
