"""Projected-gradient counter-example generator.

Starting from a distorted image, the optimizer pushes a differentiable
metric's value up (or down) while keeping the iterate inside the squared-error
ball around the reference whose radius is set by the starting image:

    extremize  metric(x, ref)   subject to   sum((x - ref)^2) <= a,

with ``a = sum((init - ref)^2)``.  Each step takes a fixed-size gradient move,
projects back onto the (convex) ball, and clamps pixels to [0, 1].  Because
the constraint caps the raw squared error, the result never scores worse than
the starting image on all-sample PSNR, which is what makes the output a
counter-example: one metric improves while the distortion budget stays fixed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import Image
from .metrics import GRADIENT_METRICS, METRICS, metric_gradient

__all__ = ["PgdConfig", "PgdResult", "project_to_ball", "generate_counterexample"]

FEASIBILITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PgdConfig:
    steps: int = 200
    alpha: float = 0.1
    direction: str = "maximize"
    keep_best: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"direction must be 'maximize' or 'minimize', got {self.direction!r}")


@dataclass(frozen=True)
class PgdResult:
    image: Image
    trajectory: tuple[tuple[int, float, float], ...]  # (step, objective, residual)
    initial_objective: float
    final_objective: float

    def write_trajectory_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "objective", "residual"])
            for step, objective, residual in self.trajectory:
                writer.writerow([step, f"{objective:.9g}", f"{residual:.3g}"])


def _sum_sq(delta: np.ndarray) -> float:
    return float(np.sum(delta.astype(np.float64) ** 2))


def _project_array(y: np.ndarray, center: np.ndarray, radius_sq: float) -> np.ndarray:
    dist_sq = _sum_sq(y - center)
    if dist_sq <= radius_sq:
        return y
    scale = math.sqrt(radius_sq / dist_sq)
    return center + (y - center) * scale


def project_to_ball(y: Image, center: Image, radius_sq: float) -> Image:
    """Euclidean projection onto the squared-error ball around ``center``.

    Points inside are returned unchanged; points outside are pulled radially
    onto the sphere and land on or just inside it (rounding the projected
    point to 32-bit samples can nudge the distance, so the radial scale is
    retried with a tiny shrink until the stored image is feasible).  The
    result stays in pixel range because it is a convex combination of ``y``
    and ``center``.
    """
    if not y.same_shape(center):
        raise ValueError(f"shape mismatch: {y.pixels.shape} vs {center.pixels.shape}")
    if radius_sq < 0:
        raise ValueError(f"squared radius must be >= 0, got {radius_sq}")
    if _sum_sq(y.pixels - center.pixels) <= radius_sq:
        return y
    center64 = center.pixels.astype(np.float64)
    target = radius_sq
    for _ in range(60):
        projected = _project_array(y.pixels.astype(np.float64), center64, target)
        img = Image.from_array(np.clip(projected, 0.0, 1.0))
        if _sum_sq(img.pixels - center.pixels) <= radius_sq:
            return img
        target *= 1.0 - 4.0e-7
    raise RuntimeError("projection failed to land inside the ball")


def generate_counterexample(
    metric: str,
    ref: Image,
    init: Image,
    config: PgdConfig | None = None,
    color_mode: str = "luminance",
) -> PgdResult:
    """Run projected gradient steps on ``metric`` from ``init`` within its own
    error budget relative to ``ref``.

    Returns the best feasible iterate (by objective, per the configured
    direction) together with the per-step (objective, constraint residual)
    trajectory.  Every iterate satisfies the ball constraint to within
    ``FEASIBILITY_TOLERANCE`` and stays inside the pixel range.
    """
    config = config or PgdConfig()
    if metric not in GRADIENT_METRICS:
        raise ValueError(
            f"metric {metric!r} has no gradient; choose from {sorted(GRADIENT_METRICS)}"
        )
    if not ref.same_shape(init):
        raise ValueError(f"shape mismatch: {ref.pixels.shape} vs {init.pixels.shape}")
    score = METRICS[metric]
    center = ref.pixels.astype(np.float64)
    radius_sq = _sum_sq(init.pixels - center)
    # Shrink the projection target so that rounding the projected iterate to
    # float32 samples cannot push the stored image past the constraint.
    slack = 4e-7 * math.sqrt(init.pixels.size * max(radius_sq, 1.0)) + 1e-12
    target_sq = max(radius_sq - slack, 0.0)

    sign = 1.0 if config.direction == "maximize" else -1.0
    better = (lambda new, best: new > best) if sign > 0 else (lambda new, best: new < best)

    current = init
    initial_objective = score(ref, current, color_mode=color_mode).value
    best_image, best_objective = current, initial_objective
    trajectory = [(0, initial_objective, _residual(current, center, radius_sq))]
    for step in range(1, config.steps + 1):
        try:
            grad = metric_gradient(metric, ref, current, color_mode=color_mode)
        except ValueError as exc:
            raise RuntimeError(f"gradient failed at step {step}: {exc}") from exc
        moved = current.pixels.astype(np.float64) + sign * config.alpha * grad
        projected = _project_array(moved, center, target_sq)
        current = Image.from_array(np.clip(projected, 0.0, 1.0))
        residual = _residual(current, center, radius_sq)
        if residual > FEASIBILITY_TOLERANCE:
            raise RuntimeError(
                f"constraint violated at step {step}: residual {residual:.3e}"
            )
        objective = score(ref, current, color_mode=color_mode).value
        trajectory.append((step, objective, residual))
        if better(objective, best_objective):
            best_objective, best_image = objective, current
    final = best_image if config.keep_best else current
    return PgdResult(
        image=final,
        trajectory=tuple(trajectory),
        initial_objective=initial_objective,
        final_objective=best_objective if config.keep_best else trajectory[-1][1],
    )


def _residual(img: Image, center: np.ndarray, radius_sq: float) -> float:
    return max(0.0, _sum_sq(img.pixels - center) - radius_sq)
