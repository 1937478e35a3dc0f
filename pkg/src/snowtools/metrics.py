"""Evaluation metrics for predicted depth and for derived surface normals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DepthMap, NormalMap
from .losses import RelativeDepthAnnotation

# Depth floor used when an affine renormalization would push values negative.
EPS_DEPTH = 1e-6

NORMAL_THRESHOLDS_DEG = (11.25, 22.5, 30.0)


@dataclass(frozen=True)
class AlignmentResult:
    """Best global scale/translation fit of a prediction onto ground truth.

    ``ls_rmse`` is sqrt(residual / n) so it shares units with plain RMSE;
    the raw minimized sum of squares is kept in ``residual_sq_sum``.
    """

    a: float
    b: float
    ls_rmse: float
    residual_sq_sum: float


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    log_rmse: float
    silog_rmse: float
    absrel: float
    sqrrel: float
    ls_rmse: float

    def to_dict(self) -> dict:
        # Fixed key order for serialized reports.
        return {
            "rmse": self.rmse,
            "log_rmse": self.log_rmse,
            "silog_rmse": self.silog_rmse,
            "absrel": self.absrel,
            "sqrrel": self.sqrrel,
            "ls_rmse": self.ls_rmse,
        }


@dataclass(frozen=True)
class OrdinalReport:
    wkdr: float
    wkdr_eq: float
    wkdr_neq: float
    threshold: float

    def to_dict(self) -> dict:
        return {
            "wkdr": self.wkdr,
            "wkdr_eq": self.wkdr_eq,
            "wkdr_neq": self.wkdr_neq,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class NormalErrorReport:
    mean_deg: float
    median_deg: float
    pct_within: dict[float, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_deg": self.mean_deg,
            "median_deg": self.median_deg,
            "pct_within": {f"{t:g}": self.pct_within[t] for t in sorted(self.pct_within)},
        }


def ls_align(z_pred: DepthMap, z_gt: DepthMap) -> AlignmentResult:
    """Closed-form least squares fit of a*pred + b onto the ground truth."""
    zp, zg = _paired_flat(z_pred, z_gt)
    if zp.size < 2:
        raise ValueError("least-squares alignment needs at least 2 pixels")
    mp = zp.mean()
    mg = zg.mean()
    zp_c = zp - mp
    var = float(np.mean(zp_c * zp_c))
    if var < 1e-15:
        a, b = 0.0, float(mg)
    else:
        a = float(np.mean(zp_c * (zg - mg))) / var
        b = float(mg - a * mp)
    resid = a * zp + b - zg
    total = float(np.dot(resid, resid))
    return AlignmentResult(a=a, b=b, ls_rmse=math.sqrt(total / zp.size), residual_sq_sum=total)


def metric_suite(z_pred: DepthMap, z_gt: DepthMap) -> MetricReport:
    """RMSE family over a prediction/ground-truth pair.

    Log-based metrics require both maps strictly positive.
    """
    zp, zg = _paired_flat(z_pred, z_gt)
    if np.any(zp <= 0) or np.any(zg <= 0):
        raise ValueError("log metrics need strictly positive depth in both maps")
    diff = zp - zg
    d = np.log(zp) - np.log(zg)
    # Centered form of mean(d^2) - mean(d)^2; same quantity, no cancellation.
    dc = d - d.mean()
    silog_var = float(np.mean(dc * dc))
    return MetricReport(
        rmse=math.sqrt(float(np.mean(diff * diff))),
        log_rmse=math.sqrt(float(np.mean(d * d))),
        silog_rmse=math.sqrt(max(silog_var, 0.0)),
        absrel=float(np.mean(np.abs(diff) / zg)),
        sqrrel=float(np.mean(diff * diff / zg)),
        ls_rmse=ls_align(z_pred, z_gt).ls_rmse,
    )


def normalize_to_stats(z: DepthMap, target_mean: float, target_std: float) -> DepthMap:
    """Affine-map a depth grid to a target mean/std, clamped positive."""
    if target_std <= 0:
        raise ValueError("target standard deviation must be positive")
    zz = z.values
    std = float(zz.std())
    if std < 1e-15:
        raise ValueError("cannot renormalize a constant depth map")
    out = (zz - zz.mean()) / std * target_std + target_mean
    return DepthMap(np.maximum(out, EPS_DEPTH), intrinsics=z.intrinsics)


def wkdr(z_pred: DepthMap, pairs: list[RelativeDepthAnnotation], delta: float) -> OrdinalReport:
    """Weighted disagreement rate between predicted and annotated relations.

    Prediction rule: equal when |log z_i - log z_j| <= delta (ratio
    semantics), otherwise the sign decides farther/closer.
    """
    if not pairs:
        raise ValueError("wkdr needs at least one ordinal pair")
    zz = z_pred.values
    if np.any(zz <= 0):
        raise ValueError("wkdr needs strictly positive predicted depth")
    h, w = zz.shape
    u = np.log(zz)

    tot_w = tot_miss = 0.0
    eq_w = eq_miss = 0.0
    neq_w = neq_miss = 0.0
    for a in pairs:
        (ix, iy), (jx, jy) = a.i, a.j
        if not (0 <= ix < w and 0 <= iy < h and 0 <= jx < w and 0 <= jy < h):
            raise ValueError("ordinal pair pixel outside the image")
        du = u[iy, ix] - u[jy, jx]
        pred = "=" if abs(du) <= delta else (">" if du > 0 else "<")
        miss = float(pred != a.r) * a.weight
        tot_w += a.weight
        tot_miss += miss
        if a.r == "=":
            eq_w += a.weight
            eq_miss += miss
        else:
            neq_w += a.weight
            neq_miss += miss

    return OrdinalReport(
        wkdr=tot_miss / tot_w,
        wkdr_eq=eq_miss / eq_w if eq_w else 0.0,
        wkdr_neq=neq_miss / neq_w if neq_w else 0.0,
        threshold=delta,
    )


def wkdr_sweep(
    z_pred: DepthMap,
    pairs: list[RelativeDepthAnnotation],
    delta_grid: list[float],
) -> tuple[float, OrdinalReport]:
    """Pick the threshold minimizing max(wkdr_eq, wkdr_neq); ties go small."""
    if not list(delta_grid):
        raise ValueError("wkdr_sweep needs a nonempty threshold grid")
    best: tuple[float, float, OrdinalReport] | None = None
    for delta in sorted(float(d) for d in delta_grid):
        rep = wkdr(z_pred, pairs, delta)
        score = max(rep.wkdr_eq, rep.wkdr_neq)
        if best is None or score < best[0]:
            best = (score, delta, rep)
    return best[1], best[2]


def normal_error_stats(pred, gt) -> NormalErrorReport:
    """Angular error statistics between matched normals.

    Accepts either two NormalMaps (compared where both are defined) or two
    (N, 3) arrays of unit vectors.
    """
    if isinstance(pred, NormalMap) and isinstance(gt, NormalMap):
        if pred.vectors.shape != gt.vectors.shape:
            raise ValueError("normal maps must have matching dimensions")
        both = pred.defined & gt.defined
        a = pred.vectors[both]
        b = gt.vectors[both]
    else:
        a = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
        b = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
        if a.shape != b.shape:
            raise ValueError("normal lists must have matching lengths")
    if a.shape[0] == 0:
        raise ValueError("no comparable normals")

    dots = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    ang = np.degrees(np.arccos(dots))
    return NormalErrorReport(
        mean_deg=float(ang.mean()),
        median_deg=float(np.median(ang)),
        pct_within={t: float(np.mean(ang <= t)) for t in NORMAL_THRESHOLDS_DEG},
    )


def _paired_flat(z_pred: DepthMap, z_gt: DepthMap) -> tuple[np.ndarray, np.ndarray]:
    if z_pred.values.shape != z_gt.values.shape:
        raise ValueError(
            f"dimension mismatch: {z_pred.width}x{z_pred.height} vs {z_gt.width}x{z_gt.height}"
        )
    return z_pred.values.ravel(), z_gt.values.ravel()
