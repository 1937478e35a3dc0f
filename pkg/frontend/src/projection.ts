/**
 * Pinhole projection of the gauge figure (arrow plus tangent grid).
 *
 * Mirrors the backend geometry exactly; the shared fixtures in
 * tests/fixtures/projection.json pin the two implementations together.
 */

import type { Vec3 } from "./gauge.js";

export interface Camera {
  focal: number;
  cx: number;
  cy: number;
}

export type Vec2 = [number, number];

export function backProject(x: number, y: number, depth: number, cam: Camera): Vec3 {
  if (!(depth > 0)) throw new Error(`depth must be positive, got ${depth}`);
  return [((x - cam.cx) * depth) / cam.focal, ((y - cam.cy) * depth) / cam.focal, depth];
}

export function project(p: Vec3, cam: Camera): Vec2 {
  if (!(p[2] > 0)) throw new Error("cannot project a point behind the camera");
  return [(cam.focal * p[0]) / p[2] + cam.cx, (cam.focal * p[1]) / p[2] + cam.cy];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function unit(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (!(n > 0)) throw new Error("cannot normalize a zero vector");
  return [v[0] / n, v[1] / n, v[2] / n];
}

function add(a: Vec3, b: Vec3, s = 1): Vec3 {
  return [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
}

/** Deterministic in-plane basis; must match the backend fixture generator. */
export function tangentBasis(n: Vec3): [Vec3, Vec3] {
  const helper: Vec3 = Math.abs(n[1]) < 0.9 ? [0, 1, 0] : [1, 0, 0];
  const e1 = unit(cross(helper, n));
  const e2 = cross(n, e1);
  return [e1, e2];
}

export interface GaugeGeometry {
  origin: Vec2;
  arrowTip: Vec2;
  gridCorners: Vec2[];
  gridLines: [Vec2, Vec2][];
}

/**
 * Project the gauge anchored at ``keypoint`` with the given depth and
 * 3D extents. Corner order: (+e1+e2), (+e1-e2), (-e1+e2), (-e1-e2).
 */
export function gaugeGeometry(
  cam: Camera,
  keypoint: Vec2,
  depth: number,
  normal: Vec3,
  gridHalf: number,
  arrowLen: number,
  divisions = 4,
): GaugeGeometry {
  const n = unit(normal);
  const origin = backProject(keypoint[0], keypoint[1], depth, cam);
  const [e1, e2] = tangentBasis(n);
  const signs: Vec2[] = [
    [1, 1],
    [1, -1],
    [-1, 1],
    [-1, -1],
  ];
  const gridCorners = signs.map(([sx, sy]) =>
    project(add(add(origin, e1, sx * gridHalf), e2, sy * gridHalf), cam),
  );
  const gridLines: [Vec2, Vec2][] = [];
  for (let i = 0; i <= divisions; i++) {
    const t = (2 * i) / divisions - 1; // -1 .. 1
    const a = add(origin, e1, t * gridHalf);
    gridLines.push([
      project(add(a, e2, -gridHalf), cam),
      project(add(a, e2, gridHalf), cam),
    ]);
    const b = add(origin, e2, t * gridHalf);
    gridLines.push([
      project(add(b, e1, -gridHalf), cam),
      project(add(b, e1, gridHalf), cam),
    ]);
  }
  return {
    origin: project(origin, cam),
    arrowTip: project(add(origin, n, arrowLen), cam),
    gridCorners,
    gridLines,
  };
}

/**
 * Gauge sized for the screen: the tangent grid's half-extent is chosen so
 * it covers about ``screenRadiusPx`` regardless of focal length. Longer
 * focal lengths therefore subtend a smaller 3D angle and show
 * proportionally less perspective distortion.
 */
export function screenGauge(
  cam: Camera,
  keypoint: Vec2,
  normal: Vec3,
  screenRadiusPx = 60,
  divisions = 4,
): GaugeGeometry {
  const depth = 1.0; // projection of the gauge is scale-free in depth
  const gridHalf = (screenRadiusPx * depth) / cam.focal;
  return gaugeGeometry(cam, keypoint, depth, normal, gridHalf, gridHalf * 1.2, divisions);
}
