/**
 * Gauge orientation state: the two degrees of freedom a worker controls.
 *
 * Camera frame: +x right, +y down, +z forward. Valid normals face the
 * camera (z < 0). Azimuth rotates in the image plane, elevation lifts the
 * normal toward the camera axis; elevation 90 is exactly camera-facing.
 */

export type Vec3 = [number, number, number];

export interface GaugeState {
  azimuthDeg: number;
  elevationDeg: number;
}

/** Keeps n_z strictly negative even at the slider's edge. */
export const MIN_ELEVATION_DEG = 0.5;
export const MAX_ELEVATION_DEG = 90;

const DEG = Math.PI / 180;

export function clampState(state: GaugeState): GaugeState {
  let az = state.azimuthDeg % 360;
  if (az >= 180) az -= 360;
  if (az < -180) az += 360;
  const el = Math.min(MAX_ELEVATION_DEG, Math.max(MIN_ELEVATION_DEG, state.elevationDeg));
  return { azimuthDeg: az, elevationDeg: el };
}

export function stateToNormal(state: GaugeState): Vec3 {
  const { azimuthDeg, elevationDeg } = clampState(state);
  const az = azimuthDeg * DEG;
  const el = elevationDeg * DEG;
  return [Math.cos(el) * Math.cos(az), Math.cos(el) * Math.sin(az), -Math.sin(el)];
}

export function normalToState(n: Vec3): GaugeState {
  const norm = Math.hypot(n[0], n[1], n[2]);
  if (!(norm > 0)) throw new Error("cannot orient the gauge along a zero vector");
  const z = n[2] / norm;
  if (z >= 0) throw new Error("gauge normals must face the camera (z < 0)");
  const el = Math.asin(-z) / DEG;
  const az = Math.atan2(n[1], n[0]) / DEG;
  return clampState({ azimuthDeg: az, elevationDeg: el });
}

export function angleBetweenDeg(a: Vec3, b: Vec3): number {
  const na = Math.hypot(a[0], a[1], a[2]);
  const nb = Math.hypot(b[0], b[1], b[2]);
  const dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
  return Math.acos(Math.min(1, Math.max(-1, dot))) / DEG;
}
