"""Classical distortion generators used as known test stimuli.

All generators are pure functions from valid images to valid images: outputs
stay inside [0, 1], seeded operations are bit-deterministic for a given
(input, seed) pair, and convolutions use unit-sum kernels with reflected
(edge-mirrored) borders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import Image

__all__ = [
    "WarpSpec",
    "WarpLevel",
    "WARP_LEVEL_TABLE",
    "gaussian_noise",
    "gaussian_blur",
    "motion_blur",
    "spatial_warp",
    "warp_with_specs",
]

# (point count, warp distance, influence radius) per severity level.
WARP_LEVEL_TABLE = ((4, 2.0, 15.0), (16, 3.0, 25.0), (32, 4.0, 35.0), (64, 6.0, 60.0))


@dataclass(frozen=True)
class WarpSpec:
    """One local warp: influence circle of radius ``radius`` around ``center``.

    ``center`` and ``target`` are (x, y) pixel coordinates; pixels inside the
    circle are pulled along the ``center -> target`` direction, with the pull
    fading to zero at the circle boundary.
    """

    center: tuple[float, float]
    target: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        dist = math.hypot(self.target[0] - self.center[0], self.target[1] - self.center[1])
        if dist >= self.radius:
            raise ValueError(
                f"warp distance {dist:.3f} must be strictly inside radius {self.radius}"
            )


@dataclass(frozen=True)
class WarpLevel:
    """Seeded recipe for a set of random warp points."""

    n: int
    s: float
    r: float
    seed: int

    def __post_init__(self):
        if self.n < 1 or self.s <= 0 or self.r <= 0:
            raise ValueError("warp level parameters must be positive")
        if self.s >= self.r:
            raise ValueError(f"warp distance {self.s} must be below radius {self.r}")

    @classmethod
    def preset(cls, level: int, seed: int) -> "WarpLevel":
        """Severity presets 1 (mild) through 4 (strong)."""
        if not 1 <= level <= len(WARP_LEVEL_TABLE):
            raise ValueError(f"level must be in 1..{len(WARP_LEVEL_TABLE)}")
        n, s, r = WARP_LEVEL_TABLE[level - 1]
        return cls(n=n, s=s, r=r, seed=seed)


def gaussian_noise(img: Image, sigma: float, seed: int) -> Image:
    """Add i.i.d. Gaussian noise with standard deviation ``sigma`` on the 0-255 scale.

    The noise is rescaled to the internal [0, 1] range and the result clamped
    back into range.  ``sigma=0`` returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma / 255.0, size=img.pixels.shape)
    return Image.from_array(np.clip(img.pixels.astype(np.float64) + noise, 0.0, 1.0))


def _reflect_pad(plane: np.ndarray, pad_h: int, pad_w: int) -> np.ndarray:
    return np.pad(plane, ((pad_h, pad_h), (pad_w, pad_w)), mode="symmetric")


def _convolve_separable(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Reflect-padded separable convolution of a 2-D plane with a 1-D kernel."""
    radius = len(kernel) // 2
    padded = _reflect_pad(plane, radius, 0)
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=0)
    plane = windows @ kernel
    padded = _reflect_pad(plane, 0, radius)
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=1)
    return windows @ kernel


def _convolve_2d(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Reflect-padded full 2-D convolution (kernel given in correlation layout)."""
    kh, kw = kernel.shape
    padded = _reflect_pad(plane, kh // 2, kw // 2)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw))
    return np.tensordot(windows, kernel, axes=((2, 3), (0, 1)))


def _apply_kernel(img: Image, apply) -> Image:
    out = np.empty_like(img.pixels, dtype=np.float64)
    for c in range(img.channels):
        out[:, :, c] = apply(img.pixels[:, :, c].astype(np.float64))
    return Image.from_array(np.clip(out, 0.0, 1.0))


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Unit-sum Gaussian taps with radius ceil(3*sigma)."""
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian blur with standard deviation ``sigma`` in pixels."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0 or math.ceil(3.0 * sigma) == 0:
        return img
    kernel = gaussian_kernel_1d(sigma)
    return _apply_kernel(img, lambda plane: _convolve_separable(plane, kernel))


def motion_blur_kernel(length: float, angle_degrees: float) -> np.ndarray:
    """Unit-sum line kernel: tent profile around a centered segment of ``length`` pixels.

    The segment direction is ``angle_degrees`` counter-clockwise from the
    positive x (column) axis.
    """
    half = (length - 1.0) / 2.0
    theta = math.radians(angle_degrees)
    dx, dy = math.cos(theta), -math.sin(theta)
    radius = max(1, math.ceil(half))
    span = np.arange(-radius, radius + 1, dtype=np.float64)
    cell_x, cell_y = np.meshgrid(span, span)
    # Distance from each cell center to the segment [-half, half] * (dx, dy).
    t = np.clip(cell_x * dx + cell_y * dy, -half, half)
    dist = np.hypot(cell_x - t * dx, cell_y - t * dy)
    kernel = np.maximum(0.0, 1.0 - dist)
    return kernel / kernel.sum()


def motion_blur(img: Image, length: float, angle_degrees: float) -> Image:
    """Linear motion blur of the given length (pixels) and direction (degrees)."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if length == 1:
        return img
    kernel = motion_blur_kernel(length, angle_degrees)
    return _apply_kernel(img, lambda plane: _convolve_2d(plane, kernel))


def _bilinear_sample(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample a 2-D plane at float coordinates, clamping to the border."""
    h, w = plane.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = plane[y0, x0] * (1.0 - fx) + plane[y0, x1] * fx
    bottom = plane[y1, x0] * (1.0 - fx) + plane[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def warp_with_specs(img: Image, specs: list[WarpSpec] | tuple[WarpSpec, ...]) -> Image:
    """Apply local warps one after another (later warps see earlier results).

    Inside each influence circle, the target pixel at ``x`` is resampled from

        u = x - ((r^2 - |x-c|^2) / ((r^2 - |x-c|^2) + |m-c|^2))^2 * (m - c)

    with bilinear interpolation; pixels at or beyond the radius are untouched.
    """
    h, w = img.height, img.width
    out = img.pixels.astype(np.float64).copy()
    for spec in specs:
        cx, cy = spec.center
        mx, my = spec.target
        r = spec.radius
        x_lo, x_hi = max(0, math.floor(cx - r)), min(w - 1, math.ceil(cx + r))
        y_lo, y_hi = max(0, math.floor(cy - r)), min(h - 1, math.ceil(cy + r))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        xs, ys = np.meshgrid(
            np.arange(x_lo, x_hi + 1, dtype=np.float64),
            np.arange(y_lo, y_hi + 1, dtype=np.float64),
        )
        dist_sq = (xs - cx) ** 2 + (ys - cy) ** 2
        inside = dist_sq < r * r
        if not inside.any():
            continue
        slack = r * r - dist_sq[inside]
        pull_sq = (mx - cx) ** 2 + (my - cy) ** 2
        factor = (slack / (slack + pull_sq)) ** 2
        src_x = xs[inside] - factor * (mx - cx)
        src_y = ys[inside] - factor * (my - cy)
        region = out[y_lo : y_hi + 1, x_lo : x_hi + 1]
        for c in range(img.channels):
            sampled = _bilinear_sample(out[:, :, c], src_x, src_y)
            channel = region[:, :, c].copy()
            channel[inside] = sampled
            region[:, :, c] = channel
    return Image.from_array(np.clip(out, 0.0, 1.0))


def spatial_warp(img: Image, level: WarpLevel) -> Image:
    """Warp the image at ``level.n`` seeded random points.

    Warp centers are uniform over the region at least ``level.r`` pixels from
    every border; each pull direction is uniform on the circle of radius
    ``level.s`` around its center.
    """
    h, w = img.height, img.width
    if w <= 2 * level.r or h <= 2 * level.r:
        raise ValueError(
            f"image {w}x{h} too small for warp radius {level.r} (needs > {2 * level.r})"
        )
    rng = np.random.default_rng(level.seed)
    specs = []
    for _ in range(level.n):
        cx = rng.uniform(level.r, w - 1 - level.r)
        cy = rng.uniform(level.r, h - 1 - level.r)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        specs.append(
            WarpSpec(
                center=(cx, cy),
                target=(cx + level.s * math.cos(phi), cy + level.s * math.sin(phi)),
                radius=level.r,
            )
        )
    return warp_with_specs(img, specs)
