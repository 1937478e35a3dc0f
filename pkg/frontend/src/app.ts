/**
 * Browser entry point: wires the gauge math, the picker controls, and the
 * annotation client to the DOM in index.html.
 */

import {
  GaugeState,
  MIN_ELEVATION_DEG,
  Vec3,
  clampState,
  normalToState,
  stateToNormal,
} from "./gauge.js";
import { AnnotationClient, SubmitRejected, Task } from "./client.js";
import { Camera, screenGauge } from "./projection.js";

const ZOOM_FACTOR = 4;
const ZOOM_SIZE = 160;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function workerId(): string {
  const KEY = "gauge-worker-id";
  let id = localStorage.getItem(KEY);
  if (!id) {
    id = `w-${Math.random().toString(36).slice(2, 10)}`;
    localStorage.setItem(KEY, id);
  }
  return id;
}

class App {
  private client = new AnnotationClient("", workerId());
  private task: Task | null = null;
  private image = new Image();
  private imageOk = false;
  private state: GaugeState = { azimuthDeg: 0, elevationDeg: 90 };
  private startedAt = 0;

  private canvas = el<HTMLCanvasElement>("scene");
  private zoom = el<HTMLCanvasElement>("zoom");
  private sphere = el<HTMLCanvasElement>("sphere");
  private azimuth = el<HTMLInputElement>("azimuth");
  private elevation = el<HTMLInputElement>("elevation");
  private status = el<HTMLElement>("status");

  constructor() {
    this.azimuth.addEventListener("input", () => this.onSliders());
    this.elevation.addEventListener("input", () => this.onSliders());
    this.sphere.addEventListener("pointerdown", (e) => this.onSpherePick(e));
    el<HTMLButtonElement>("submit").addEventListener("click", () => this.submit(false));
    el<HTMLButtonElement>("hard").addEventListener("click", () => this.submit(true));
    window.addEventListener("online", () => {
      void this.client.flushQueue().then(() => this.note("reconnected; queue flushed"));
    });
  }

  async start(): Promise<void> {
    await this.loadNext();
  }

  private note(text: string): void {
    this.status.textContent = text;
  }

  private async loadNext(): Promise<void> {
    try {
      this.task = await this.client.nextTask();
    } catch {
      this.note("service unreachable; retrying in 3s");
      setTimeout(() => void this.loadNext(), 3000);
      return;
    }
    if (!this.task) {
      this.note("no tasks left - thank you!");
      return;
    }
    this.startedAt = performance.now();
    this.state = { azimuthDeg: 0, elevationDeg: 90 };
    this.syncSliders();
    this.imageOk = false;
    this.image = new Image();
    this.image.onload = () => {
      this.imageOk = true;
      this.render();
    };
    this.image.onerror = () => {
      this.note("image failed to load - submit hard-to-tell or retry");
      this.render();
    };
    this.image.src = this.client.imageUrl(this.task);
    this.note(`task ${this.task.task_id}: orient the gauge, then submit`);
    this.render();
  }

  private onSliders(): void {
    this.state = clampState({
      azimuthDeg: Number(this.azimuth.value),
      elevationDeg: Number(this.elevation.value),
    });
    this.render();
  }

  private syncSliders(): void {
    this.azimuth.value = String(this.state.azimuthDeg);
    this.elevation.value = String(this.state.elevationDeg);
  }

  /** Click on the sphere widget: position encodes the normal direction. */
  private onSpherePick(ev: PointerEvent): void {
    const rect = this.sphere.getBoundingClientRect();
    const r = Math.min(rect.width, rect.height) / 2;
    const dx = (ev.clientX - rect.left - rect.width / 2) / r;
    const dy = (ev.clientY - rect.top - rect.height / 2) / r;
    const rho = Math.hypot(dx, dy);
    if (rho > 1) return;
    const nz = -Math.sqrt(Math.max(0, 1 - rho * rho));
    const n: Vec3 = rho === 0 ? [0, 0, -1] : [dx, dy, Math.min(nz, -1e-6)];
    this.state = normalToState(n);
    this.syncSliders();
    this.render();
  }

  private camera(): Camera {
    if (!this.task) throw new Error("no task");
    return {
      focal: this.task.focal_length_px,
      cx: (this.canvas.width - 1) / 2,
      cy: (this.canvas.height - 1) / 2,
    };
  }

  private render(): void {
    if (!this.task) return;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.imageOk) {
      ctx.drawImage(this.image, 0, 0, this.canvas.width, this.canvas.height);
    } else {
      ctx.fillStyle = "#222";
      ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    }

    const [kx, ky] = this.task.keypoint;
    const gauge = screenGauge(this.camera(), [kx, ky], stateToNormal(this.state));

    ctx.lineWidth = 1.2;
    ctx.strokeStyle = "rgba(40, 220, 90, 0.9)";
    for (const [a, b] of gauge.gridLines) {
      ctx.beginPath();
      ctx.moveTo(a[0], a[1]);
      ctx.lineTo(b[0], b[1]);
      ctx.stroke();
    }
    ctx.strokeStyle = "#ff3333";
    ctx.lineWidth = 2.5;
    ctx.beginPath();
    ctx.moveTo(gauge.origin[0], gauge.origin[1]);
    ctx.lineTo(gauge.arrowTip[0], gauge.arrowTip[1]);
    ctx.stroke();
    ctx.fillStyle = "#ffd700";
    ctx.beginPath();
    ctx.arc(kx, ky, 3, 0, 2 * Math.PI);
    ctx.fill();

    this.renderZoom(kx, ky);
    this.renderSphere();
  }

  private renderZoom(kx: number, ky: number): void {
    const ctx = this.zoom.getContext("2d");
    if (!ctx) return;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, ZOOM_SIZE, ZOOM_SIZE);
    const half = ZOOM_SIZE / (2 * ZOOM_FACTOR);
    if (this.imageOk) {
      const sx = (kx / this.canvas.width) * this.image.naturalWidth;
      const sy = (ky / this.canvas.height) * this.image.naturalHeight;
      ctx.drawImage(
        this.image,
        sx - half, sy - half, 2 * half, 2 * half,
        0, 0, ZOOM_SIZE, ZOOM_SIZE,
      );
    }
    ctx.strokeStyle = "#ffd700";
    ctx.beginPath();
    ctx.moveTo(ZOOM_SIZE / 2 - 6, ZOOM_SIZE / 2);
    ctx.lineTo(ZOOM_SIZE / 2 + 6, ZOOM_SIZE / 2);
    ctx.moveTo(ZOOM_SIZE / 2, ZOOM_SIZE / 2 - 6);
    ctx.lineTo(ZOOM_SIZE / 2, ZOOM_SIZE / 2 + 6);
    ctx.stroke();
  }

  private renderSphere(): void {
    const ctx = this.sphere.getContext("2d");
    if (!ctx) return;
    const s = this.sphere.width;
    ctx.clearRect(0, 0, s, s);
    const r = s / 2 - 2;
    ctx.strokeStyle = "#888";
    ctx.beginPath();
    ctx.arc(s / 2, s / 2, r, 0, 2 * Math.PI);
    ctx.stroke();
    const n = stateToNormal(this.state);
    ctx.fillStyle = "#ff3333";
    ctx.beginPath();
    ctx.arc(s / 2 + n[0] * r, s / 2 + n[1] * r, 4, 0, 2 * Math.PI);
    ctx.fill();
  }

  private async submit(hard: boolean): Promise<void> {
    if (!this.task) return;
    const elapsed = (performance.now() - this.startedAt) / 1000;
    try {
      const ack = hard
        ? await this.client.submitHardToTell(this.task, elapsed)
        : await this.client.submitNormal(this.task, stateToNormal(this.state), elapsed);
      this.note(ack ? `submitted (#${ack.seq})` : "offline - queued, will retry");
    } catch (err) {
      if (err instanceof SubmitRejected) {
        this.note(err.message);
      } else {
        throw err;
      }
    }
    await this.loadNext();
  }
}

declare global {
  interface Window {
    gaugeApp?: App;
  }
}

window.addEventListener("DOMContentLoaded", () => {
  const app = new App();
  window.gaugeApp = app;
  void app.start();
});

export { MIN_ELEVATION_DEG };
