"""Reference-based quality metrics and their image-space gradients.

PSNR, SSIM and MS-SSIM operate on the float [0, 1] scale.  Color images are
reduced to BT.601 luminance by default; ``color_mode="per_channel"`` instead
averages the per-channel metric values.  ``metric_gradient`` returns the
derivative of the scalar score with respect to every sample of the distorted
input, which is what the counter-example optimizer consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import Image, _LUMA_WEIGHTS

__all__ = [
    "MetricScore",
    "MetricSingularity",
    "psnr",
    "ssim",
    "ms_ssim",
    "metric_gradient",
    "METRICS",
    "GRADIENT_METRICS",
]

SSIM_WINDOW_SIZE = 11
SSIM_WINDOW_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class MetricSingularity(ValueError):
    """The metric or its gradient is undefined at the given inputs."""


@dataclass(frozen=True)
class MetricScore:
    value: float
    higher_is_better: bool = True


def _check_shapes(ref: Image, dist: Image) -> None:
    if not ref.same_shape(dist):
        raise ValueError(
            f"shape mismatch: reference {ref.pixels.shape} vs distorted {dist.pixels.shape}"
        )


def _planes(img: Image, color_mode: str) -> list[np.ndarray]:
    """Float64 2-D planes the metric runs on: one luminance plane or C channels."""
    px = img.pixels.astype(np.float64)
    if img.channels == 1:
        return [px[:, :, 0]]
    if color_mode == "luminance":
        return [px @ _LUMA_WEIGHTS]
    if color_mode == "per_channel":
        return [px[:, :, c] for c in range(img.channels)]
    raise ValueError(f"unknown color_mode {color_mode!r}")


def _plane_gradient_to_image(
    grads: list[np.ndarray], img: Image, color_mode: str
) -> np.ndarray:
    """Chain per-plane gradients back to the (H, W, C) sample layout."""
    if img.channels == 1:
        return grads[0][:, :, np.newaxis]
    if color_mode == "luminance":
        return grads[0][:, :, np.newaxis] * _LUMA_WEIGHTS[np.newaxis, np.newaxis, :]
    scale = 1.0 / img.channels
    return np.stack([g * scale for g in grads], axis=2)


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------


def psnr(ref: Image, dist: Image, color_mode: str = "luminance") -> MetricScore:
    """Peak signal-to-noise ratio in dB with peak value 1; +inf for equal inputs."""
    _check_shapes(ref, dist)
    values = []
    for x, y in zip(_planes(ref, color_mode), _planes(dist, color_mode)):
        mse = float(np.mean((y - x) ** 2))
        values.append(math.inf if mse == 0.0 else -10.0 * math.log10(mse))
    return MetricScore(value=float(np.mean(values)))


def _psnr_gradient(ref: Image, dist: Image, color_mode: str) -> np.ndarray:
    xs = _planes(ref, color_mode)
    ys = _planes(dist, color_mode)
    grads = []
    for x, y in zip(xs, ys):
        mse = float(np.mean((y - x) ** 2))
        if mse == 0.0:
            raise MetricSingularity("psnr gradient is undefined for identical inputs")
        grads.append(-20.0 * (y - x) / (y.size * mse * math.log(10.0)))
    return _plane_gradient_to_image(grads, dist, color_mode)


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------


def _gaussian_window(size: int = SSIM_WINDOW_SIZE, sigma: float = SSIM_WINDOW_SIGMA):
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


_SSIM_TAPS = _gaussian_window()


def _windowed_mean(plane: np.ndarray, taps: np.ndarray = _SSIM_TAPS) -> np.ndarray:
    """Valid-mode separable correlation with the unit-sum window."""
    windows = np.lib.stride_tricks.sliding_window_view(plane, len(taps), axis=0)
    plane = windows @ taps
    windows = np.lib.stride_tricks.sliding_window_view(plane, len(taps), axis=1)
    return windows @ taps


def _spread(field: np.ndarray, taps: np.ndarray = _SSIM_TAPS) -> np.ndarray:
    """Adjoint of :func:`_windowed_mean`: scatter per-window values back to pixels.

    Implemented as zero padding by (window size - 1) followed by the same
    valid-mode correlation; this equals full convolution because the window
    is symmetric.
    """
    pad = len(taps) - 1
    padded = np.pad(field, ((pad, pad), (pad, pad)), mode="constant")
    return _windowed_mean(padded, taps)


def _ssim_fields(x: np.ndarray, y: np.ndarray):
    mu_x = _windowed_mean(x)
    mu_y = _windowed_mean(y)
    mu_xx = _windowed_mean(x * x)
    mu_yy = _windowed_mean(y * y)
    mu_xy = _windowed_mean(x * y)
    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov = mu_xy - mu_x * mu_y
    lum_den = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    cs_den = var_x + var_y + SSIM_C2
    lum = (2.0 * mu_x * mu_y + SSIM_C1) / lum_den
    cs = (2.0 * cov + SSIM_C2) / cs_den
    return mu_x, mu_y, lum, cs, lum_den, cs_den


def _check_ssim_size(img: Image, minimum: int) -> None:
    if min(img.height, img.width) < minimum:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than the minimum {minimum} "
            "pixels per side this metric needs"
        )


def ssim(ref: Image, dist: Image, color_mode: str = "luminance") -> MetricScore:
    """Mean local SSIM over 11x11 Gaussian windows (sigma 1.5, C1=1e-4, C2=9e-4)."""
    _check_shapes(ref, dist)
    _check_ssim_size(ref, SSIM_WINDOW_SIZE)
    values = []
    for x, y in zip(_planes(ref, color_mode), _planes(dist, color_mode)):
        _, _, lum, cs, _, _ = _ssim_fields(x, y)
        values.append(float(np.mean(lum * cs)))
    return MetricScore(value=float(np.mean(values)))


def _ssim_plane_gradient(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    mu_x, mu_y, lum, cs, lum_den, cs_den = _ssim_fields(x, y)
    n_windows = lum.size
    # Within one window, d(lum*cs)/dy(q) = w(q) * (a + b*(x(q)-mu_x) - c*(y(q)-mu_y))
    # with the per-window coefficients below; summing over windows turns each
    # term into a spread (adjoint correlation) against the window taps.
    a = 2.0 * cs * (mu_x - lum * mu_y) / lum_den
    b = 2.0 * lum / cs_den
    c = 2.0 * lum * cs / cs_den
    grad = (
        _spread(a)
        + x * _spread(b)
        - _spread(b * mu_x)
        - y * _spread(c)
        + _spread(c * mu_y)
    )
    return grad / n_windows


def _ssim_gradient(ref: Image, dist: Image, color_mode: str) -> np.ndarray:
    _check_ssim_size(ref, SSIM_WINDOW_SIZE)
    grads = [
        _ssim_plane_gradient(x, y)
        for x, y in zip(_planes(ref, color_mode), _planes(dist, color_mode))
    ]
    return _plane_gradient_to_image(grads, dist, color_mode)


# ---------------------------------------------------------------------------
# MS-SSIM
# ---------------------------------------------------------------------------


def _downsample2(plane: np.ndarray) -> np.ndarray:
    """2x2 block mean, cropping a trailing odd row/column."""
    h, w = plane.shape
    plane = plane[: h - h % 2, : w - w % 2]
    return 0.25 * (plane[0::2, 0::2] + plane[0::2, 1::2] + plane[1::2, 0::2] + plane[1::2, 1::2])


def ms_ssim(ref: Image, dist: Image, color_mode: str = "luminance") -> MetricScore:
    """Five-scale SSIM product with the standard scale weights.

    Contrast-structure terms from the four coarser-to-finer scales and the
    full SSIM at the coarsest scale are combined as a weighted geometric
    product; negative terms are floored at zero so the product stays real.
    """
    _check_shapes(ref, dist)
    n_scales = len(MS_SSIM_WEIGHTS)
    _check_ssim_size(ref, SSIM_WINDOW_SIZE * 2 ** (n_scales - 1))
    values = []
    for x, y in zip(_planes(ref, color_mode), _planes(dist, color_mode)):
        score = 1.0
        for scale, weight in enumerate(MS_SSIM_WEIGHTS):
            _, _, lum, cs, _, _ = _ssim_fields(x, y)
            if scale < n_scales - 1:
                term = float(np.mean(cs))
                x, y = _downsample2(x), _downsample2(y)
            else:
                term = float(np.mean(lum * cs))
            score *= max(term, 0.0) ** weight
        values.append(score)
    return MetricScore(value=float(np.mean(values)))


# ---------------------------------------------------------------------------
# Gradient dispatch
# ---------------------------------------------------------------------------

METRICS = {"psnr": psnr, "ssim": ssim, "ms-ssim": ms_ssim}

GRADIENT_METRICS = {"psnr": _psnr_gradient, "ssim": _ssim_gradient}


def metric_gradient(
    metric: str, ref: Image, dist: Image, color_mode: str = "luminance"
) -> np.ndarray:
    """Gradient of the named metric's value with respect to the distorted samples.

    Returns an array shaped like ``dist.pixels``.  Available for the
    differentiable metrics ``psnr`` (except at identical inputs) and ``ssim``.
    """
    _check_shapes(ref, dist)
    try:
        fn = GRADIENT_METRICS[metric]
    except KeyError:
        raise ValueError(
            f"no gradient for metric {metric!r}; choose from {sorted(GRADIENT_METRICS)}"
        ) from None
    grad = fn(ref, dist, color_mode)
    if not np.isfinite(grad).all():
        raise MetricSingularity(f"non-finite gradient for metric {metric!r}")
    return grad
