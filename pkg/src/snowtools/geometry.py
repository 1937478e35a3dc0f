"""Pinhole-camera geometry over dense depth fields.

Camera frame convention: +x right, +y down, +z forward from the camera
center.  A pixel (x, y) with depth z' back-projects to

    ((x - cx) * z' / f,  (y - cy) * z' / f,  z')

and normals derived from depth are canonically oriented toward the camera
(z-component strictly negative).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Cross products shorter than this leave the normal undefined.
EPS_NORMAL = 1e-12
# |n . ray| below this counts as a plane parallel to the viewing ray.
EPS_RAY = 1e-9


class DegenerateGeometryError(ValueError):
    """Plane and viewing ray are (nearly) parallel."""


class BehindCameraError(DegenerateGeometryError):
    """Ray-plane intersection falls at non-positive depth."""


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with square pixels and a single focal length.

    The principal point defaults to the image center ((W-1)/2, (H-1)/2)
    when not supplied.
    """

    focal_length_px: float
    width: int
    height: int
    principal_point: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.focal_length_px) and self.focal_length_px > 0):
            raise ValueError(f"focal length must be finite and positive, got {self.focal_length_px}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if self.principal_point is None:
            object.__setattr__(
                self, "principal_point", ((self.width - 1) / 2.0, (self.height - 1) / 2.0)
            )
        cx, cy = self.principal_point
        if not (math.isfinite(cx) and math.isfinite(cy)):
            raise ValueError("principal point must be finite")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError(f"principal point ({cx}, {cy}) outside {self.width}x{self.height} image")

    @property
    def cx(self) -> float:
        return self.principal_point[0]

    @property
    def cy(self) -> float:
        return self.principal_point[1]


def scale_intrinsics(k: CameraIntrinsics, factor: int) -> CameraIntrinsics:
    """Intrinsics for an image pooled by ``factor``: f, cx, cy all shrink."""
    _check_pool_factor(factor)
    if k.width % factor or k.height % factor:
        raise ValueError(f"{k.width}x{k.height} not divisible by pooling factor {factor}")
    return CameraIntrinsics(
        focal_length_px=k.focal_length_px / factor,
        width=k.width // factor,
        height=k.height // factor,
        principal_point=(k.cx / factor, k.cy / factor),
    )


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Dense grid of depth values, row-major, top row first.

    Values must be finite; positivity is required only by operations that
    take logs or derive geometry, and is enforced there.
    """

    values: np.ndarray
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"depth grid must be 2-D and nonempty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("depth values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if self.intrinsics is not None:
            if (self.intrinsics.width, self.intrinsics.height) != (self.width, self.height):
                raise ValueError("intrinsics dimensions do not match depth grid")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class NormalMap:
    """Grid of unit normals with an explicit defined/undefined mask.

    Undefined entries are stored as (0, 0, 0).  Defined entries are unit
    length and camera-facing (z-component < 0).
    """

    vectors: np.ndarray
    defined: np.ndarray

    def __post_init__(self) -> None:
        vec = np.array(self.vectors, dtype=np.float64, copy=True)
        mask = np.array(self.defined, dtype=bool, copy=True)
        if vec.ndim != 3 or vec.shape[2] != 3:
            raise ValueError(f"normal grid must have shape (H, W, 3), got {vec.shape}")
        if mask.shape != vec.shape[:2]:
            raise ValueError("defined mask shape does not match normal grid")
        if not np.all(np.isfinite(vec)):
            raise ValueError("normal components must be finite")
        norms = np.linalg.norm(vec[mask], axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("defined normals must be unit length")
        if np.any(vec[mask][:, 2] >= 0):
            raise ValueError("defined normals must face the camera (z-component < 0)")
        vec[~mask] = 0.0
        vec.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "defined", mask)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize a vector to unit length."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < EPS_NORMAL:
        raise ValueError("cannot normalize a (near-)zero vector")
    return v / n


def angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two unit vectors in degrees, clamped against fp overshoot."""
    d = float(np.dot(np.asarray(a, float), np.asarray(b, float)))
    return math.degrees(math.acos(min(1.0, max(-1.0, d))))


def pixel_ray(x: float, y: float, k: CameraIntrinsics) -> np.ndarray:
    """Direction of the viewing ray through pixel (x, y), normalized to unit depth."""
    return np.array([(x - k.cx) / k.focal_length_px, (y - k.cy) / k.focal_length_px, 1.0])


def back_project(x: float, y: float, z_prime: float, k: CameraIntrinsics) -> Point3:
    """Map pixel (x, y) with depth ``z_prime`` to its camera-frame 3D point.

    Pixel coordinates are absolute; the principal point is subtracted
    internally.
    """
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z_prime)):
        raise ValueError("back_project requires finite inputs")
    if z_prime <= 0:
        raise ValueError(f"depth must be positive, got {z_prime}")
    f = k.focal_length_px
    return Point3((x - k.cx) * z_prime / f, (y - k.cy) * z_prime / f, z_prime)


def project(p, k: CameraIntrinsics) -> tuple[float, float]:
    """Pinhole projection of a camera-frame point back to pixel coordinates."""
    X, Y, Z = float(p[0]), float(p[1]), float(p[2])
    if Z <= 0:
        raise BehindCameraError(f"cannot project a point at depth {Z}")
    f = k.focal_length_px
    return (f * X / Z + k.cx, f * Y / Z + k.cy)


def derive_normals(z: DepthMap, k: CameraIntrinsics | None = None) -> NormalMap:
    """Derive per-pixel surface normals from a depth map.

    For every interior pixel the normal is the unit cross product of the
    horizontal chord [beta(x-1, y) - beta(x+1, y)] and the vertical chord
    [beta(x, y-1) - beta(x, y+1)] between back-projected neighbors, flipped
    to face the camera.  Border pixels are undefined, as are pixels whose
    chords are (near-)parallel.
    """
    k = _resolve_intrinsics(z, k)
    h, w = z.values.shape
    if h < 3 or w < 3:
        raise ValueError(f"need at least a 3x3 map to derive normals, got {w}x{h}")

    zz = z.values
    f = k.focal_length_px
    dirx = (np.arange(w) - k.cx) / f          # (W,)
    diry = (np.arange(h) - k.cy) / f          # (H,)
    X = zz * dirx[None, :]
    Y = zz * diry[:, None]

    # Chords between opposite neighbors of each interior pixel.
    v1 = np.stack(
        [X[1:-1, :-2] - X[1:-1, 2:], Y[1:-1, :-2] - Y[1:-1, 2:], zz[1:-1, :-2] - zz[1:-1, 2:]],
        axis=-1,
    )
    v2 = np.stack(
        [X[:-2, 1:-1] - X[2:, 1:-1], Y[:-2, 1:-1] - Y[2:, 1:-1], zz[:-2, 1:-1] - zz[2:, 1:-1]],
        axis=-1,
    )
    c = np.cross(v1, v2)
    cn = np.linalg.norm(c, axis=-1)
    ok = cn >= EPS_NORMAL

    n = np.zeros_like(c)
    np.divide(c, cn[..., None], out=n, where=ok[..., None])
    flip = n[..., 2] > 0
    n[flip] *= -1.0
    # A normal that ends up exactly side-on cannot satisfy the camera-facing
    # convention; treat it as undefined like a vanishing cross product.
    ok &= n[..., 2] < 0

    vectors = np.zeros((h, w, 3))
    defined = np.zeros((h, w), dtype=bool)
    vectors[1:-1, 1:-1][ok] = n[ok]
    defined[1:-1, 1:-1] = ok
    return NormalMap(vectors=vectors, defined=defined)


def should_be_depth(
    anchor_px: tuple[float, float],
    anchor_depth: float,
    n: np.ndarray,
    target_px: tuple[float, float],
    k: CameraIntrinsics,
) -> float:
    """Depth the target pixel must take to lie on the plane through the anchor.

    The plane passes through the back-projection of ``anchor_px`` at
    ``anchor_depth`` and is oriented by the unit normal ``n``.  The return
    value is the z-coordinate of its intersection with the viewing ray
    through ``target_px``.
    """
    n = np.asarray(n, dtype=np.float64)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("plane normal must be unit length")
    if anchor_depth <= 0 or not math.isfinite(anchor_depth):
        raise ValueError(f"anchor depth must be positive and finite, got {anchor_depth}")
    x0 = np.array(back_project(anchor_px[0], anchor_px[1], anchor_depth, k))
    d = pixel_ray(target_px[0], target_px[1], k)
    denom = float(np.dot(n, d))
    if abs(denom) < EPS_RAY:
        raise DegenerateGeometryError("plane is (nearly) parallel to the target viewing ray")
    z_hat = float(np.dot(n, x0)) / denom
    if z_hat <= 0:
        raise BehindCameraError(f"ray-plane intersection at non-positive depth {z_hat}")
    return z_hat


def downsample(z: DepthMap, factor: int, k: CameraIntrinsics | None = None) -> DepthMap:
    """Mean-pool a depth map over non-overlapping factor x factor blocks.

    Intrinsics, when available, are scaled alongside (f, cx, cy divided by
    the factor) and attached to the result.
    """
    _check_pool_factor(factor)
    h, w = z.values.shape
    if h % factor or w % factor:
        raise ValueError(f"{w}x{h} map not divisible by pooling factor {factor}")
    if k is None:
        k = z.intrinsics
    if factor == 1:
        return DepthMap(z.values, intrinsics=k)
    pooled = z.values.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return DepthMap(pooled, intrinsics=None if k is None else scale_intrinsics(k, factor))


def _check_pool_factor(factor: int) -> None:
    if not isinstance(factor, (int, np.integer)) or factor < 1 or (factor & (factor - 1)):
        raise ValueError(f"pooling factor must be a positive power of two, got {factor}")


def _resolve_intrinsics(z: DepthMap, k: CameraIntrinsics | None) -> CameraIntrinsics:
    k = k if k is not None else z.intrinsics
    if k is None:
        raise ValueError("no camera intrinsics supplied or attached to the depth map")
    if (k.width, k.height) != (z.width, z.height):
        raise ValueError("intrinsics dimensions do not match depth grid")
    return k
