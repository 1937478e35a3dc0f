"""Shared builders for synthetic scenes and gradient checks."""

from __future__ import annotations

import math

import numpy as np
import pytest

from snowtools.geometry import CameraIntrinsics, DepthMap


def intrinsics(f: float = 100.0, width: int = 16, height: int = 16) -> CameraIntrinsics:
    return CameraIntrinsics(focal_length_px=f, width=width, height=height)


def plane_depth(n, z0: float, k: CameraIntrinsics) -> DepthMap:
    """Depth map of the 3D plane through (0, 0, z0) with unit normal n.

    z(x, y) = (n . P0) / (n . d(x, y)) where d is the pixel's viewing ray.
    Raises if the plane is not camera-facing over the whole grid.
    """
    n = np.asarray(n, dtype=np.float64)
    xs = (np.arange(k.width) - k.cx) / k.focal_length_px
    ys = (np.arange(k.height) - k.cy) / k.focal_length_px
    denom = n[0] * xs[None, :] + n[1] * ys[:, None] + n[2]
    if np.any(denom >= -1e-12):
        raise ValueError("plane tilts past the field of view; pick a gentler normal")
    z = (n[2] * z0) / denom
    assert np.all(z > 0)
    return DepthMap(z, intrinsics=k)


def tilted_normal(theta_deg: float, phi_deg: float = 0.0) -> np.ndarray:
    """Unit normal tilted theta away from the camera axis, azimuth phi."""
    t = math.radians(theta_deg)
    p = math.radians(phi_deg)
    return np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), -math.cos(t)])


def random_depth(rng: np.random.Generator, width: int = 16, height: int = 16,
                 low: float = 0.5, high: float = 2.0,
                 k: CameraIntrinsics | None = None) -> DepthMap:
    return DepthMap(rng.uniform(low, high, size=(height, width)), intrinsics=k)


def smooth_random_depth(rng: np.random.Generator, width: int = 16, height: int = 16,
                        base: float = 2.0, amplitude: float = 0.25,
                        roughness: float = 0.004) -> DepthMap:
    """Random but spatially smooth positive map (low-frequency log-noise).

    Finite differences with the standard relative step are meaningful on
    these; fully independent per-pixel noise makes the derived-normal
    geometry so ill-conditioned that truncation error swamps the check.
    """
    from snowtools.optimizer import _up2

    coarse = rng.normal(0.0, amplitude, size=(height // 4, width // 4))
    log_z = _up2(_up2(coarse)) + rng.normal(0.0, roughness, size=(height, width))
    return DepthMap(base * np.exp(log_z))


def tiny_angle_rad(a, b) -> float:
    """Angle between unit vectors, well-conditioned near zero (atan2 form)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def max_rel_error(analytic: np.ndarray, reference: np.ndarray, atol: float = 1e-9,
                  floor_frac: float = 0.0) -> float:
    """Largest elementwise relative deviation where either gradient is live.

    Entries where both gradients are below ``atol`` must agree absolutely.
    With ``floor_frac`` > 0 the denominator is floored at that fraction of
    the gradient's largest magnitude: central differences carry an absolute
    truncation error set by the big components, so far smaller components
    cannot meaningfully be held to a relative tolerance.
    """
    a = np.asarray(analytic, float)
    r = np.asarray(reference, float)
    live = (np.abs(a) > atol) | (np.abs(r) > atol)
    if np.any(~live):
        np.testing.assert_allclose(a[~live], r[~live], atol=atol)
    if not np.any(live):
        return 0.0
    denom = np.maximum(np.abs(a[live]), np.abs(r[live]))
    if floor_frac > 0.0:
        scale = max(float(np.abs(a).max()), float(np.abs(r).max()))
        denom = np.maximum(denom, floor_frac * scale)
    return float(np.max(np.abs(a[live] - r[live]) / denom))


def two_plane_scene(k: CameraIntrinsics, crease_x: int = 16, tilt_deg: float = 60.0,
                    depth_at_crease: float = 2.0) -> DepthMap:
    """Fronto-parallel plane left of ``crease_x``, a slanted plane to the right.

    The two planes share the 3D line over the crease column, so the depth
    field is continuous with a slope kink there.
    """
    n = tilted_normal(tilt_deg)
    f = k.focal_length_px
    plane_offset = n[0] * (crease_x - k.cx) * depth_at_crease / f + n[2] * depth_at_crease
    xs = np.arange(k.width)
    denom = n[0] * (xs - k.cx) / f + n[2]
    z_slant = plane_offset / denom
    zz = np.where(xs[None, :] < crease_x, depth_at_crease, z_slant[None, :])
    zz = np.broadcast_to(zz, (k.height, k.width)).copy()
    assert np.all(zz > 0)
    return DepthMap(zz, intrinsics=k)


def covering_centers(width: int, height: int, budget: int) -> list[tuple[int, int]]:
    """Deterministic set of interior pixels whose 4-neighbor stencils cover
    every pixel that can be covered (all but the four corners).

    Normal-loss gradients touch only the four neighbors of an annotated
    pixel, so recovery experiments must place annotations such that every
    pixel is inside some stencil; a uniform sample cannot do that.  Greedy
    set cover, padded with unused interior pixels up to ``budget``.
    """
    interior = [(x, y) for y in range(1, height - 1) for x in range(1, width - 1)]
    uncovered = {(x, y) for y in range(height) for x in range(width)}
    for cx, cy in ((0, 0), (width - 1, 0), (0, height - 1), (width - 1, height - 1)):
        uncovered.discard((cx, cy))

    def stencil(p):
        x, y = p
        return [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]

    chosen: list[tuple[int, int]] = []
    remaining = list(interior)
    while uncovered:
        best = max(remaining, key=lambda p: (sum(q in uncovered for q in stencil(p)),
                                             -p[1] * width - p[0]))
        gain = sum(q in uncovered for q in stencil(best))
        if gain == 0:
            raise RuntimeError("cover construction stalled")
        chosen.append(best)
        remaining.remove(best)
        for q in stencil(best):
            uncovered.discard(q)
    if len(chosen) > budget:
        raise ValueError(f"cover needs {len(chosen)} centers, budget is {budget}")
    for p in remaining:
        if len(chosen) == budget:
            break
        chosen.append(p)
    return chosen


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
