"""Crowd annotation protocol: task records, two-worker aggregation, screening,
consistency statistics, and synthetic annotation generation from ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, angle_deg, derive_normals, downsample, unit
from .losses import NormalAnnotation, RelativeDepthAnnotation

# Two vector annotations agreeing within this angle are averaged; otherwise
# both are discarded.
AGREEMENT_THRESHOLD_DEG = 30.0

# Invented screening defaults; the collection protocol leaves them open.
GOLD_TOLERANCE_DEG = 45.0
GOLD_MIN_PASS_FRACTION = 0.7
GOLD_MIN_TASKS = 5

# Default depth-ratio threshold for labeling a pair "equal".
DEFAULT_RATIO_THRESHOLD = 1.02

# Agreement statistics measured on previously crowd-collected normals; kept
# as baselines for judging new collections.
CROWD_PAIR_AGREEMENT_DEG = 14.32
CROWD_HHD_DEG = 7.4
CROWD_HKD_DEG = 32.8


@dataclass(frozen=True, eq=False)
class AnnotationTask:
    """One keypoint in one image whose surface normal is to be annotated."""

    task_id: str
    image_id: str
    keypoint: tuple[int, int]
    focal_length_px: float
    gold: np.ndarray | None = None  # reference normal, hidden from workers

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValueError("task_id must be nonempty")
        if self.focal_length_px <= 0:
            raise ValueError("focal length must be positive")
        if self.gold is not None:
            vec = np.array(self.gold, dtype=np.float64, copy=True)
            if vec.shape != (3,) or abs(np.linalg.norm(vec) - 1.0) > 1e-6:
                raise ValueError("gold normal must be a unit 3-vector")
            vec.setflags(write=False)
            object.__setattr__(self, "gold", vec)

    @property
    def is_gold(self) -> bool:
        return self.gold is not None


@dataclass(frozen=True, eq=False)
class WorkerResponse:
    """A worker's answer: a camera-facing unit normal, or "hard to tell"."""

    task_id: str
    worker_id: str
    normal: np.ndarray | None = None
    hard_to_tell: bool = False
    elapsed_s: float = 0.0
    response_id: str | None = None

    def __post_init__(self) -> None:
        if not self.task_id or not self.worker_id:
            raise ValueError("task_id and worker_id must be nonempty")
        if self.hard_to_tell == (self.normal is not None):
            raise ValueError("response must carry exactly one of normal / hard_to_tell")
        if self.elapsed_s < 0:
            raise ValueError("elapsed time cannot be negative")
        if self.normal is not None:
            vec = np.array(self.normal, dtype=np.float64, copy=True)
            if vec.shape != (3,) or not np.all(np.isfinite(vec)):
                raise ValueError("response normal must be a finite 3-vector")
            if abs(np.linalg.norm(vec) - 1.0) > 1e-6:
                raise ValueError("response normal must be unit length")
            if vec[2] >= 0:
                raise ValueError("response normal must face the camera (z-component < 0)")
            vec.setflags(write=False)
            object.__setattr__(self, "normal", vec)


@dataclass(frozen=True, eq=False)
class AggregateResult:
    task_id: str
    status: str  # accepted | rejected | pending
    normal: np.ndarray | None = None
    disagreement_deg: float | None = None


@dataclass(frozen=True)
class ConsistencyReport:
    """Worker-worker and worker-reference angular disagreement, per task and pooled."""

    hhd_deg: float
    hkd_deg: float | None
    per_task: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "hhd_deg": self.hhd_deg,
            "hkd_deg": self.hkd_deg,
            "per_task": {t: dict(v) for t, v in sorted(self.per_task.items())},
        }


def aggregate_pair(
    r1: WorkerResponse,
    r2: WorkerResponse,
    threshold_deg: float = AGREEMENT_THRESHOLD_DEG,
) -> AggregateResult:
    """Combine the two responses for a task under the agreement rule.

    Accepts (with the renormalized average) when both are vector responses
    within ``threshold_deg`` of each other, inclusive; rejects otherwise.
    """
    if r1.task_id != r2.task_id:
        raise ValueError(f"responses for different tasks: {r1.task_id!r} vs {r2.task_id!r}")
    if r1.worker_id == r2.worker_id:
        raise ValueError("the two responses must come from distinct workers")
    if r1.hard_to_tell or r2.hard_to_tell:
        return AggregateResult(task_id=r1.task_id, status="rejected")
    ang = angle_deg(r1.normal, r2.normal)
    if ang <= threshold_deg:
        return AggregateResult(
            task_id=r1.task_id,
            status="accepted",
            normal=unit(r1.normal + r2.normal),
            disagreement_deg=ang,
        )
    return AggregateResult(task_id=r1.task_id, status="rejected", disagreement_deg=ang)


def generate_normal_annotations(
    z_gt: DepthMap,
    k: CameraIntrinsics,
    count: int,
    scales: tuple[int, ...] = (1,),
    seed: int = 0,
) -> list[NormalAnnotation]:
    """Sample ground-truth normal annotations at random distinct locations.

    The budget is split equally across the requested pooling factors with
    the remainder going to the finest level.  Locations are interior pixels
    (at their own scale) with a defined derived normal, sampled without
    replacement; the result is a pure function of the inputs and the seed.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    scales = tuple(int(s) for s in scales)
    if not scales:
        raise ValueError("need at least one scale factor")
    rng = np.random.default_rng(seed)
    n_levels = len(scales)
    base, rem = divmod(count, n_levels)
    budgets = [base + (rem if i == 0 else 0) for i in range(n_levels)]

    out: list[NormalAnnotation] = []
    for factor, budget in zip(scales, budgets):
        if budget == 0:
            continue
        level = int(math.log2(factor))
        pooled = downsample(z_gt, factor, k) if factor > 1 else z_gt
        k_level = pooled.intrinsics if factor > 1 else k
        nm = derive_normals(pooled, k_level)
        ys, xs = np.nonzero(nm.defined)
        if budget > xs.size:
            raise ValueError(
                f"requested {budget} annotations at factor {factor} but only "
                f"{xs.size} usable interior pixels exist"
            )
        pick = rng.choice(xs.size, size=budget, replace=False)
        pick.sort()
        for idx in pick:
            x, y = int(xs[idx]), int(ys[idx])
            out.append(NormalAnnotation(p=(x, y), n=nm.vectors[y, x], scale_level=level))
    return out


def generate_ordinal_pairs(
    z_gt: DepthMap,
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD,
    count: int = 1,
    seed: int = 0,
) -> list[RelativeDepthAnnotation]:
    """Sample distinct pixel pairs and label them by thresholding depth ratios.

    A pair is "equal" when max(z_i, z_j) / min(z_i, z_j) <= ratio_threshold,
    otherwise ordered by comparison.  Deterministic for a fixed seed.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if ratio_threshold <= 1:
        raise ValueError("ratio threshold must exceed 1")
    zz = z_gt.values
    if np.any(zz <= 0):
        raise ValueError("ground-truth depth must be strictly positive")
    h, w = zz.shape
    n_px = h * w
    if count > n_px * (n_px - 1) // 2:
        raise ValueError("more pairs requested than distinct pixel pairs exist")

    rng = np.random.default_rng(seed)
    seen: set[tuple[int, int]] = set()
    out: list[RelativeDepthAnnotation] = []
    while len(out) < count:
        i_flat = int(rng.integers(n_px))
        j_flat = int(rng.integers(n_px))
        if i_flat == j_flat:
            continue
        key = (min(i_flat, j_flat), max(i_flat, j_flat))
        if key in seen:
            continue
        seen.add(key)
        iy, ix = divmod(i_flat, w)
        jy, jx = divmod(j_flat, w)
        zi, zj = zz[iy, ix], zz[jy, jx]
        ratio = max(zi, zj) / min(zi, zj)
        if ratio <= ratio_threshold:
            r = "="
        else:
            r = ">" if zi > zj else "<"
        out.append(RelativeDepthAnnotation(i=(ix, iy), j=(jx, jy), r=r))
    return out


def consistency_stats(
    groups: dict[str, list[np.ndarray]],
    reference: dict[str, np.ndarray] | None = None,
) -> ConsistencyReport:
    """Angular disagreement of responses against their group mean and,
    where a sensor reference exists, against that reference.

    Both pooled statistics average over individual responses, not over tasks.
    """
    if not groups:
        raise ValueError("consistency_stats needs at least one task group")
    reference = reference or {}

    hh_angles: list[float] = []
    hk_angles: list[float] = []
    per_task: dict[str, dict] = {}
    for task_id in sorted(groups):
        vecs = [np.asarray(v, dtype=np.float64) for v in groups[task_id]]
        if len(vecs) < 2:
            raise ValueError(f"task {task_id!r} has fewer than 2 vector responses")
        mean = unit(np.sum(vecs, axis=0))
        task_hh = [angle_deg(v, mean) for v in vecs]
        hh_angles.extend(task_hh)
        entry = {"hhd_deg": float(np.mean(task_hh)), "count": len(vecs)}
        ref = reference.get(task_id)
        if ref is not None:
            task_hk = [angle_deg(v, ref) for v in vecs]
            hk_angles.extend(task_hk)
            entry["hkd_deg"] = float(np.mean(task_hk))
        per_task[task_id] = entry

    return ConsistencyReport(
        hhd_deg=float(np.mean(hh_angles)),
        hkd_deg=float(np.mean(hk_angles)) if hk_angles else None,
        per_task=per_task,
    )


def gold_check(
    graded: list[tuple[WorkerResponse, np.ndarray]],
    tolerance_deg: float = GOLD_TOLERANCE_DEG,
    min_pass_fraction: float = GOLD_MIN_PASS_FRACTION,
    min_tasks: int = GOLD_MIN_TASKS,
) -> str:
    """Classify a worker from responses to tasks with known answers.

    ``graded`` pairs each response with the hidden reference normal.  A
    hard-to-tell answer on a gold task counts as a miss.  Returns one of
    "trusted", "spammer", "insufficient_data".
    """
    if len(graded) < min_tasks:
        return "insufficient_data"
    hits = 0
    for resp, gold in graded:
        if resp.normal is not None and angle_deg(resp.normal, gold) <= tolerance_deg:
            hits += 1
    return "spammer" if hits / len(graded) < min_pass_fraction else "trusted"
