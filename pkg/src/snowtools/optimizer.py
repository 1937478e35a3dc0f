"""Recover a dense depth field from sparse annotations by direct first-order
minimization of the composite loss.

This is a desk-scale stand-in for training a predictor: the per-pixel depth
grid itself is the parameter vector, reparameterized through softplus so
depth stays positive.  Because every loss term is invariant to global depth
scaling, recovered maps are meaningful only up to a scale/translation and
should be compared to ground truth after least-squares alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import CameraIntrinsics, DepthMap
from .losses import (
    CompiledObjective,
    LossConfig,
    NormalAnnotation,
    RelativeDepthAnnotation,
    _sigmoid,
    _softplus,
    positivity_inverse,
)

STOP_WINDOW = 50  # iterations over which the relative loss decrease is measured


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass
class OptimizeJob:
    width: int
    height: int
    intrinsics: CameraIntrinsics
    ordinal: list[RelativeDepthAnnotation] = field(default_factory=list)
    normals: list[NormalAnnotation] = field(default_factory=list)
    cfg: LossConfig = field(default_factory=LossConfig)
    max_iters: int = 20_000
    step: float = 0.05
    stop_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if (self.intrinsics.width, self.intrinsics.height) != (self.width, self.height):
            raise ValueError("intrinsics dimensions do not match job dimensions")


@dataclass
class OptimizeTrace:
    losses: list[float]
    iterations_run: int
    final_grad_norm: float
    best_loss: float
    best_iteration: int


def _up2(a: np.ndarray) -> np.ndarray:
    """Bilinear x2 upsampling with half-pixel alignment and edge clamping."""
    for axis in (0, 1):
        n = a.shape[axis]
        src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
        i0 = np.clip(np.floor(src).astype(int), 0, n - 1)
        i1 = np.clip(i0 + 1, 0, n - 1)
        t = np.clip(src - np.floor(src), 0.0, 1.0)
        lo = np.take(a, i0, axis=axis)
        hi = np.take(a, i1, axis=axis)
        shape = [1, 1]
        shape[axis] = 2 * n
        t = t.reshape(shape)
        a = (1.0 - t) * lo + t * hi
    return a


def _up2_adjoint(g: np.ndarray) -> np.ndarray:
    """Transpose of _up2: scatters fine-grid gradients back to the coarse grid."""
    for axis in (0, 1):
        n = g.shape[axis] // 2
        src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
        i0 = np.clip(np.floor(src).astype(int), 0, n - 1)
        i1 = np.clip(i0 + 1, 0, n - 1)
        t = np.clip(src - np.floor(src), 0.0, 1.0)
        moved = np.moveaxis(g, axis, 0)
        out = np.zeros((n,) + moved.shape[1:])
        np.add.at(out, i0, (1.0 - t).reshape((-1,) + (1,) * (moved.ndim - 1)) * moved)
        np.add.at(out, i1, t.reshape((-1,) + (1,) * (moved.ndim - 1)) * moved)
        g = np.moveaxis(out, 0, axis)
    return g


class _PyramidField:
    """Latent grid expressed as a sum of bilinearly upsampled resolutions.

    Gradient descent in these coordinates fills directions the annotations
    do not pin with smooth interpolation from their surroundings (the role
    the predictor's own smoothness plays in real training) instead of
    leaving them frozen at the initialization.
    """

    def __init__(self, height: int, width: int, init_value: float):
        shapes = [(height, width)]
        h, w = height, width
        while h % 2 == 0 and w % 2 == 0 and h >= 4 and w >= 4:
            h, w = h // 2, w // 2
            shapes.append((h, w))
        self.levels = [np.zeros(s) for s in shapes]  # fine -> coarse
        self.levels[-1] += init_value  # constant at the coarsest level

    def compose(self) -> np.ndarray:
        u = self.levels[-1]
        for lvl in reversed(self.levels[:-1]):
            u = _up2(u) + lvl
        return u

    def gradient(self, g_fine: np.ndarray) -> list[np.ndarray]:
        out = []
        g = g_fine
        for _ in self.levels[:-1]:
            out.append(g)
            g = _up2_adjoint(g)
        out.append(g)
        return out

    def step(self, direction: list[np.ndarray], alpha: float) -> "_PyramidField":
        other = _PyramidField.__new__(_PyramidField)
        other.levels = [lvl - alpha * d for lvl, d in zip(self.levels, direction)]
        return other


# Coarse-to-fine schedule: a pyramid level is unfrozen once the loss has
# stalled (relative improvement below PHASE_TOL) for PHASE_PATIENCE steps.
PHASE_PATIENCE = 30
PHASE_TOL = 1e-9
MOMENTUM = 0.95


def optimize_depth(job: OptimizeJob) -> tuple[DepthMap, OptimizeTrace]:
    """Minimize the composite loss over a latent grid u with z = softplus(u).

    The latent grid is parameterized as a multiresolution pyramid (sum of
    bilinearly upsampled grids) optimized coarse-to-fine: finer levels stay
    frozen until the active ones plateau.  Steps follow the momentum-
    accelerated pyramid gradient with a backtracking step size, so the loss
    decreases strictly at every accepted move.  Starts from constant depth 1
    and stops at ``max_iters`` or, once every level is active, when the best
    loss has decreased by less than ``stop_tol`` (relatively) over the last
    50 iterations.  The best iterate is returned, so the final loss never
    exceeds the initial one.  Fully deterministic for a fixed job.
    """
    if not job.ordinal and not job.normals:
        raise ValueError("empty objective: the job carries no annotations")

    shape = (job.height, job.width)
    objective = CompiledObjective(shape, job.ordinal, job.normals, job.cfg, job.intrinsics)

    def evaluate(u_grid: np.ndarray):
        return objective(_softplus(u_grid))

    pyramid = _PyramidField(job.height, job.width, float(positivity_inverse(np.array(1.0))))
    n_levels = len(pyramid.levels)
    active = n_levels - 1  # only the coarsest level moves at first
    velocity = [np.zeros_like(lvl) for lvl in pyramid.levels]
    alpha = job.step

    losses: list[float] = []
    best_series: list[float] = []
    best_loss = math.inf
    best_u = pyramid.compose()
    best_it = 0
    phase_best = math.inf
    phase_stall = 0
    window = 0  # iterations since the last unfreeze, for the stop rule

    u = pyramid.compose()
    res = evaluate(u)
    grad_norm = 0.0
    it = 0
    for it in range(1, job.max_iters + 1):
        if not math.isfinite(res.value):
            raise DivergenceError(it)
        losses.append(res.value)
        if res.value < best_loss:
            best_loss = res.value
            best_u = u.copy()
            best_it = it
        best_series.append(best_loss)
        window += 1

        g_fine = res.gradient * _sigmoid(u)
        grad_norm = float(np.linalg.norm(g_fine))

        if active == 0 and window > STOP_WINDOW:
            then = best_series[it - 1 - STOP_WINDOW]
            rel = (then - best_loss) / max(abs(then), 1e-30)
            if rel < job.stop_tol:
                break

        if res.value < phase_best - PHASE_TOL * max(1.0, abs(phase_best)):
            phase_best = res.value
            phase_stall = 0
        else:
            phase_stall += 1
        if phase_stall >= PHASE_PATIENCE and active > 0:
            active -= 1
            phase_best = math.inf
            phase_stall = 0
            window = 0
            velocity = [np.zeros_like(v) for v in velocity]
            alpha = max(alpha, job.step)

        direction = pyramid.gradient(g_fine)
        for lvl in range(active):
            direction[lvl] = np.zeros_like(direction[lvl])
        velocity = [MOMENTUM * v + d for v, d in zip(velocity, direction)]
        descent = sum(float(np.sum(v * d)) for v, d in zip(velocity, direction))
        if descent <= 0.0:
            # Stale momentum is no longer a descent direction; restart it.
            velocity = list(direction)
            descent = sum(float(np.sum(d * d)) for d in direction)
            if descent == 0.0:
                continue  # flat point: let the plateau logic wind down

        for _ in range(40):
            trial_field = pyramid.step(velocity, alpha)
            trial_u = trial_field.compose()
            trial = evaluate(trial_u)
            if trial.value < res.value:
                pyramid, u, res = trial_field, trial_u, trial
                alpha = min(alpha * 1.3, 1e6)
                break
            alpha *= 0.5
            if alpha < 1e-18:
                break  # cannot decrease further; the plateau rules take over

    recovered = DepthMap(_softplus(best_u), intrinsics=job.intrinsics)
    trace = OptimizeTrace(
        losses=losses,
        iterations_run=it,
        final_grad_norm=grad_norm,
        best_loss=best_loss,
        best_iteration=best_it,
    )
    return recovered, trace


def finite_diff_gradient(
    z: DepthMap,
    loss_fn: Callable[[DepthMap], float],
    step: float = 1e-4,
) -> np.ndarray:
    """Central-difference gradient of a scalar loss over the depth grid.

    The step is relative: each pixel is perturbed by ``step * z`` at that
    pixel.  Test oracle only; quadratic cost in the grid size.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    zz = z.values
    grad = np.zeros_like(zz)
    it = np.nditer(zz, flags=["multi_index"])
    for val in it:
        idx = it.multi_index
        h = step * float(val)
        zp = zz.copy()
        zm = zz.copy()
        zp[idx] += h
        zm[idx] -= h
        f_p = loss_fn(DepthMap(zp, intrinsics=z.intrinsics))
        f_m = loss_fn(DepthMap(zm, intrinsics=z.intrinsics))
        grad[idx] = (f_p - f_m) / (2.0 * h)
    return grad
