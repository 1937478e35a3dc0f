"""Training objective over a depth field: ordinal terms, normal terms, composite.

Every loss returns both its value and the exact analytic gradient with
respect to the depth grid.  Ordinal losses act on log depth (a difference
of logs is a log depth ratio); normal losses act on the depth-derived
surface geometry.  All of them are invariant to a global scaling of the
depth field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    EPS_NORMAL,
    EPS_RAY,
    CameraIntrinsics,
    DepthMap,
    scale_intrinsics,
)

# Margin in log-depth units matching a 2% depth-ratio threshold.
DEFAULT_MARGIN = math.log(1.02)

RELATIONS = (">", "<", "=")


@dataclass(frozen=True)
class RelativeDepthAnnotation:
    """Ordinal relation between two pixels: is ``i`` farther, closer, or equal."""

    i: tuple[int, int]
    j: tuple[int, int]
    r: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if tuple(self.i) == tuple(self.j):
            raise ValueError("ordinal annotation needs two distinct pixels")
        if self.r not in RELATIONS:
            raise ValueError(f"relation must be one of {RELATIONS}, got {self.r!r}")
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError(f"weight must be positive, got {self.weight}")


@dataclass(frozen=True, eq=False)
class NormalAnnotation:
    """Unit surface normal at a pixel, optionally at a pooled resolution."""

    p: tuple[int, int]
    n: np.ndarray
    scale_level: int = 0

    def __post_init__(self) -> None:
        vec = np.array(self.n, dtype=np.float64, copy=True)
        if vec.shape != (3,) or not np.all(np.isfinite(vec)):
            raise ValueError("normal must be a finite 3-vector")
        if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
            raise ValueError("annotation normal must be unit length")
        if vec[2] >= 0:
            raise ValueError("annotation normal must face the camera (z-component < 0)")
        if self.scale_level < 0:
            raise ValueError("scale level must be non-negative")
        vec.setflags(write=False)
        object.__setattr__(self, "n", vec)


@dataclass
class LossConfig:
    """Knobs of the composite objective.

    normal_weight balances the normal terms against the ordinal terms,
    margin is the log-ratio separation beyond which ordinal terms go flat,
    and scales lists the pooling factors usable by multiscale annotations.
    """

    normal_weight: float = 1.0
    margin: float = DEFAULT_MARGIN
    normal_loss_kind: str = "angle"
    scales: tuple[int, ...] = (1,)
    eps_normal: float = EPS_NORMAL
    eps_ray: float = EPS_RAY
    # Compare each neighbor's plane-implied depth against the center pixel's
    # depth instead of the neighbor's own (alternate, off by default).
    compare_center: bool = False

    def __post_init__(self) -> None:
        if self.normal_weight < 0:
            raise ValueError("normal_weight must be non-negative")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.normal_loss_kind not in ("angle", "depth"):
            raise ValueError(f"unknown normal loss kind {self.normal_loss_kind!r}")
        self.scales = tuple(int(s) for s in self.scales)
        if not self.scales or self.scales[0] != 1:
            raise ValueError("scales must start with factor 1")
        for s in self.scales:
            if s < 1 or (s & (s - 1)):
                raise ValueError(f"scales must be powers of two, got {s}")


@dataclass(eq=False)
class LossResult:
    """Loss value plus dense gradient d(loss)/d(depth), zero off-stencil.

    ``evaluated`` counts the annotation terms that contributed and
    ``skipped`` the ones dropped for degenerate geometry.
    """

    value: float
    gradient: np.ndarray
    evaluated: int = 1
    skipped: int = 0


def positivity_transform(u) -> DepthMap:
    """Map an unconstrained grid to positive depth via softplus ln(1 + e^u)."""
    return DepthMap(_softplus(np.asarray(u, dtype=np.float64)))


def positivity_inverse(z) -> np.ndarray:
    """Inverse softplus ln(e^z - 1); domain error for non-positive depth."""
    arr = np.asarray(z.values if isinstance(z, DepthMap) else z, dtype=np.float64)
    if np.any(arr <= 0):
        raise ValueError("positivity_inverse requires strictly positive depth")
    # Symmetric overflow guard: for large z, ln(e^z - 1) = z + ln(1 - e^-z).
    low = np.log(np.expm1(np.minimum(arr, 20.0)))
    high = arr + np.log1p(-np.exp(-np.maximum(arr, 20.0)))
    return np.where(arr > 20.0, high, low)


def _softplus(u: np.ndarray) -> np.ndarray:
    # Overflow guard: for large u, ln(1 + e^u) = u + ln(1 + e^-u).
    low = np.log1p(np.exp(np.minimum(u, 20.0)))
    high = u + np.log1p(np.exp(-np.maximum(u, 20.0)))
    return np.where(u > 20.0, high, low)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    pos = np.where(u >= 0, u, 0.0)
    neg = np.where(u < 0, u, 0.0)
    e = np.exp(neg)
    return np.where(u >= 0, 1.0 / (1.0 + np.exp(-pos)), e / (1.0 + e))


# ---------------------------------------------------------------------------
# Ordinal terms
# ---------------------------------------------------------------------------

def margin_ordinal_loss(z: DepthMap, a: RelativeDepthAnnotation, margin: float = DEFAULT_MARGIN) -> LossResult:
    """Margin-limited ranking loss on log depth.

    For an inequality the penalty stops decreasing once the pair is ordered
    correctly by more than ``margin`` in log depth; for an equality it sits
    on a constant floor of margin^2 while the gap is within the margin.
    Gradients are exactly zero on those plateaus.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    values, grad = _ordinal_terms(z.values, [a], margin=margin)
    return LossResult(value=float(values[0]), gradient=grad)


def legacy_ordinal_loss(z: DepthMap, a: RelativeDepthAnnotation) -> LossResult:
    """Unbounded ranking loss on log depth, kept for comparison runs.

    Inequality pairs are rewarded for separating without limit, which is
    what the margin variant fixes.
    """
    values, grad = _ordinal_terms(z.values, [a], margin=None)
    return LossResult(value=float(values[0]), gradient=grad)


def _ordinal_arrays(anns: list[RelativeDepthAnnotation], shape: tuple[int, int]):
    h, w = shape
    ix = np.array([a.i[0] for a in anns])
    iy = np.array([a.i[1] for a in anns])
    jx = np.array([a.j[0] for a in anns])
    jy = np.array([a.j[1] for a in anns])
    for xs, ys in ((ix, iy), (jx, jy)):
        if np.any(xs < 0) or np.any(xs >= w) or np.any(ys < 0) or np.any(ys >= h):
            raise ValueError("ordinal annotation pixel outside the image")
    rel = np.array([a.r for a in anns])
    return ix, iy, jx, jy, rel


def _ordinal_terms(
    zz: np.ndarray,
    anns: list[RelativeDepthAnnotation],
    margin: float | None,
    arrays=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-annotation loss values and the summed gradient grid."""
    ix, iy, jx, jy, rel = arrays if arrays is not None else _ordinal_arrays(anns, zz.shape)

    zi = zz[iy, ix]
    zj = zz[jy, jx]
    if np.any(zi <= 0) or np.any(zj <= 0):
        raise ValueError("ordinal losses need strictly positive depth (log is taken)")

    s = np.log(zi) - np.log(zj)
    values = np.zeros(len(rel))
    ds = np.zeros(len(rel))  # d(value)/d(s)

    for sign, r in ((1.0, ">"), (-1.0, "<")):
        m = rel == r
        if not np.any(m):
            continue
        g = sign * s[m]  # gap in the direction that should grow
        if margin is None:
            values[m] = np.logaddexp(0.0, -g)
            ds[m] = sign * -_sigmoid(-g)
        else:
            capped = np.minimum(g, margin)
            values[m] = np.logaddexp(0.0, -capped)
            slope = np.where(g < margin, -_sigmoid(-g), 0.0)
            ds[m] = sign * slope

    m = rel == "="
    if np.any(m):
        d = s[m]
        if margin is None:
            values[m] = d * d
            ds[m] = 2.0 * d
        else:
            inside = np.abs(d) <= margin
            values[m] = np.where(inside, margin * margin, d * d)
            ds[m] = np.where(inside, 0.0, 2.0 * d)

    grad = np.zeros_like(zz)
    np.add.at(grad, (iy, ix), ds / zi)
    np.add.at(grad, (jy, jx), -ds / zj)
    return values, grad


# ---------------------------------------------------------------------------
# Normal terms
# ---------------------------------------------------------------------------

def angle_normal_loss(
    z: DepthMap,
    a: NormalAnnotation,
    k: CameraIntrinsics,
    eps_normal: float = EPS_NORMAL,
) -> LossResult:
    """Negative dot product between the annotation and the derived normal.

    Ranges over [-1, 1]; the gradient flows into the four neighbors of the
    annotated pixel through the cross product and its normalization.  An
    undefined derived normal skips the annotation (reported via ``skipped``)
    rather than raising.
    """
    batch = _normal_terms(z.values, k, [a], kind="angle", eps_normal=eps_normal)
    return _single_normal_result(z, batch)


def depth_normal_loss(
    z: DepthMap,
    a: NormalAnnotation,
    k: CameraIntrinsics,
    eps_ray: float = EPS_RAY,
    compare_center: bool = False,
) -> LossResult:
    """Scale-free squared discrepancy between plane-implied and predicted depth.

    For each pair of opposite neighbors of the annotated pixel, the depth one
    neighbor should take to lie on the annotated tangent plane anchored at the
    other is compared against that neighbor's own predicted depth, normalized
    by the squared sum.  Degenerate ray-plane pairs are skipped and counted;
    if all four are degenerate the whole annotation is skipped.
    """
    batch = _normal_terms(
        z.values, k, [a], kind="depth", eps_ray=eps_ray, compare_center=compare_center
    )
    return _single_normal_result(z, batch)


def _single_normal_result(z: DepthMap, batch: "_NormalBatch") -> LossResult:
    grad = np.zeros_like(z.values)
    batch.scatter_gradient(grad, scale=1.0)
    skipped = int(batch.skipped[0])
    return LossResult(
        value=float(batch.values[0]),
        gradient=grad,
        evaluated=0 if skipped else 1,
        skipped=skipped,
    )


class _NormalBatch:
    """Vectorized evaluation of one normal-loss kind over many annotations."""

    def __init__(self, values, skipped, pair_skips, rows, cols, grads):
        self.values = values          # (M,) per-annotation loss values
        self.skipped = skipped        # (M,) bool, annotation dropped entirely
        self.pair_skips = pair_skips  # total degenerate neighbor terms
        self._rows = rows             # list of (M,) row index arrays
        self._cols = cols             # list of (M,) col index arrays
        self._grads = grads           # list of (M,) gradient contributions

    def scatter_gradient(self, grad: np.ndarray, scale: float, weights: np.ndarray | None = None) -> None:
        for rows, cols, g in zip(self._rows, self._cols, self._grads):
            contrib = g * scale if weights is None else g * (scale * weights)
            np.add.at(grad, (rows, cols), contrib)


def _normal_arrays(anns: list[NormalAnnotation], k: CameraIntrinsics):
    px = np.array([a.p[0] for a in anns])
    py = np.array([a.p[1] for a in anns])
    if np.any(px < 1) or np.any(px >= k.width - 1) or np.any(py < 1) or np.any(py >= k.height - 1):
        raise ValueError("normal annotation must sit on an interior pixel")
    n = np.stack([a.n for a in anns])  # (M, 3)
    return px, py, n


def _normal_terms(
    zz: np.ndarray,
    k: CameraIntrinsics,
    anns: list[NormalAnnotation],
    kind: str,
    eps_normal: float = EPS_NORMAL,
    eps_ray: float = EPS_RAY,
    compare_center: bool = False,
    arrays=None,
) -> _NormalBatch:
    h, w = zz.shape
    if (k.width, k.height) != (w, h):
        raise ValueError("intrinsics dimensions do not match depth grid")
    px, py, n = arrays if arrays is not None else _normal_arrays(anns, k)
    m_count = len(px)

    f = k.focal_length_px
    cx, cy = k.cx, k.cy

    def ray(xs, ys):
        return np.stack([(xs - cx) / f, (ys - cy) / f, np.ones_like(xs, dtype=float)], axis=-1)

    xL, xR, yT, yB = px - 1, px + 1, py - 1, py + 1
    zL, zR = zz[py, xL], zz[py, xR]
    zT, zB = zz[yT, px], zz[yB, px]
    dL, dR = ray(xL, py), ray(xR, py)
    dT, dB = ray(px, yT), ray(px, yB)

    rows = [py, py, yT, yB]
    cols = [xL, xR, px, px]

    if kind == "angle":
        v1 = zL[:, None] * dL - zR[:, None] * dR
        v2 = zT[:, None] * dT - zB[:, None] * dB
        c = np.cross(v1, v2)
        cn = np.linalg.norm(c, axis=-1)
        skipped = cn < eps_normal
        cn_safe = np.where(skipped, 1.0, cn)
        sign = np.where(c[:, 2] > 0, -1.0, 1.0)
        skipped |= c[:, 2] == 0

        dot_nc = np.einsum("ij,ij->i", n, c)
        values = np.where(skipped, 0.0, -sign * dot_nc / cn_safe)
        # d(value)/dc for value = -sign * <n, c> / |c|
        dvdc = -sign[:, None] * (n / cn_safe[:, None] - dot_nc[:, None] * c / cn_safe[:, None] ** 3)
        live = (~skipped).astype(float)
        gL = np.einsum("ij,ij->i", dvdc, np.cross(dL, v2)) * live
        gR = -np.einsum("ij,ij->i", dvdc, np.cross(dR, v2)) * live
        gT = np.einsum("ij,ij->i", dvdc, np.cross(v1, dT)) * live
        gB = -np.einsum("ij,ij->i", dvdc, np.cross(v1, dB)) * live
        grads = [gL, gR, gT, gB]
        pair_skips = 0

    elif kind == "depth":
        aL = np.einsum("ij,ij->i", n, dL)
        aR = np.einsum("ij,ij->i", n, dR)
        aT = np.einsum("ij,ij->i", n, dT)
        aB = np.einsum("ij,ij->i", n, dB)
        zC = zz[py, px]

        values = np.zeros(m_count)
        grads = [np.zeros(m_count) for _ in range(4)]
        if compare_center:
            rows = rows + [py]
            cols = cols + [px]
            grads.append(np.zeros(m_count))
        # (target ray dot, anchor ray dot, anchor depth, target depth,
        #  gradient slot of anchor, gradient slot of target)
        pair_specs = [
            (aB, aT, zT, zB, 2, 3),  # bottom neighbor from top anchor
            (aT, aB, zB, zT, 3, 2),  # top neighbor from bottom anchor
            (aL, aR, zR, zL, 1, 0),  # left neighbor from right anchor
            (aR, aL, zL, zR, 0, 1),  # right neighbor from left anchor
        ]
        valid_counts = np.zeros(m_count, dtype=int)
        pair_skips = 0
        for a_t, a_a, z_a, z_t, slot_a, slot_t in pair_specs:
            ok = np.abs(a_t) >= eps_ray
            rho = np.where(ok, a_a / np.where(ok, a_t, 1.0), 0.0)
            z_hat = rho * z_a
            ok &= z_hat > 0
            z_cmp = zC if compare_center else z_t
            ssum = z_hat + z_cmp
            ok &= ssum > 0
            diff = z_hat - z_cmp
            ssum_safe = np.where(ok, ssum, 1.0)
            term = np.where(ok, (diff / ssum_safe) ** 2, 0.0)
            values += term
            # t = ((a-b)/(a+b))^2:  dt/da = 4b(a-b)/(a+b)^3,  dt/db = -4a(a-b)/(a+b)^3
            common = np.where(ok, 4.0 * diff / ssum_safe**3, 0.0)
            grads[slot_a] += common * z_cmp * rho
            slot_cmp = 4 if compare_center else slot_t
            grads[slot_cmp] += -common * z_hat
            valid_counts += ok.astype(int)
            pair_skips += int(np.sum(~ok))

        skipped = valid_counts == 0
        for g in grads:
            g[skipped] = 0.0
        values[skipped] = 0.0

    else:
        raise ValueError(f"unknown normal loss kind {kind!r}")

    return _NormalBatch(values, skipped, pair_skips, rows, cols, grads)


# ---------------------------------------------------------------------------
# Composite objective
# ---------------------------------------------------------------------------

class CompiledObjective:
    """The composite objective with all annotation data pre-extracted.

    Repeated evaluation (as in the optimizer's inner loop) skips the
    per-call unpacking of annotation objects; a single evaluation through
    ``composite_loss`` builds one of these and calls it once.
    """

    def __init__(
        self,
        shape: tuple[int, int],
        ordinal: list[RelativeDepthAnnotation],
        normals: list[NormalAnnotation],
        cfg: LossConfig,
        k: CameraIntrinsics,
    ):
        h, w = shape
        if (k.width, k.height) != (w, h):
            raise ValueError("intrinsics dimensions do not match depth grid")
        self.shape = shape
        self.cfg = cfg
        self.n_ord = len(ordinal)
        self.n_normals = len(normals)
        self._ordinal_arrays = _ordinal_arrays(ordinal, shape) if ordinal else None
        self.levels: list[tuple[int, CameraIntrinsics, np.ndarray, tuple]] = []
        by_level: dict[int, list[int]] = {}
        for idx, a in enumerate(normals):
            by_level.setdefault(a.scale_level, []).append(idx)
        for level in sorted(by_level):
            factor = 2**level
            if factor not in cfg.scales:
                raise ValueError(
                    f"annotation at scale level {level} (factor {factor}) "
                    f"not allowed by configured scales {cfg.scales}"
                )
            if h % factor or w % factor:
                raise ValueError(f"grid {w}x{h} not divisible by scale factor {factor}")
            k_level = scale_intrinsics(k, factor) if factor > 1 else k
            idxs = np.array(by_level[level])
            arrays = _normal_arrays([normals[i] for i in idxs], k_level)
            self.levels.append((factor, k_level, idxs, arrays))

    def __call__(self, zz: np.ndarray) -> LossResult:
        cfg = self.cfg
        grad = np.zeros(self.shape)
        value = 0.0
        total_skipped = 0

        if self.n_ord:
            ord_values, ord_grad = _ordinal_terms(
                zz, [], margin=cfg.margin, arrays=self._ordinal_arrays
            )
            value += float(np.sum(ord_values)) / self.n_ord
            grad += ord_grad / self.n_ord

        norm_values = np.zeros(self.n_normals)
        norm_live = np.zeros(self.n_normals, dtype=bool)
        batches = []
        for factor, k_level, idxs, arrays in self.levels:
            if factor == 1:
                pooled = zz
            else:
                h, w = self.shape
                pooled = zz.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
            batch = _normal_terms(
                pooled,
                k_level,
                [],
                kind=cfg.normal_loss_kind,
                eps_normal=cfg.eps_normal,
                eps_ray=cfg.eps_ray,
                compare_center=cfg.compare_center,
                arrays=arrays,
            )
            norm_values[idxs] = batch.values
            norm_live[idxs] = ~batch.skipped
            total_skipped += int(np.sum(batch.skipped))
            batches.append((factor, pooled.shape, batch))

        n_norm = int(np.sum(norm_live))
        if self.n_ord == 0 and n_norm == 0:
            raise ValueError(
                "empty objective: no ordinal pairs and no evaluable normal annotations"
            )

        if n_norm:
            value += cfg.normal_weight * float(np.sum(norm_values)) / n_norm
            for factor, pooled_shape, batch in batches:
                if factor == 1:
                    batch.scatter_gradient(grad, scale=cfg.normal_weight / n_norm)
                else:
                    coarse = np.zeros(pooled_shape)
                    batch.scatter_gradient(coarse, scale=cfg.normal_weight / n_norm)
                    # Each pooled value is the mean of factor^2 fine pixels.
                    fine = np.repeat(np.repeat(coarse, factor, axis=0), factor, axis=1)
                    grad += fine / (factor * factor)

        return LossResult(
            value=value,
            gradient=grad,
            evaluated=self.n_ord + n_norm,
            skipped=total_skipped,
        )


def composite_loss(
    z: DepthMap,
    ordinal: list[RelativeDepthAnnotation],
    normals: list[NormalAnnotation],
    cfg: LossConfig,
    k: CameraIntrinsics,
) -> LossResult:
    """Mean ordinal term plus ``normal_weight`` times the mean normal term.

    Normal annotations with ``scale_level`` > 0 are evaluated on the
    mean-pooled depth map at factor 2^level with the gradient chained back
    through the pooling.  Reduction order is fixed (annotation index order)
    so results are bit-reproducible.  Skipped normal annotations are
    excluded from the normal-term average.
    """
    return CompiledObjective(z.values.shape, ordinal, normals, cfg, k)(z.values)
