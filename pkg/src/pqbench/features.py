"""Shift-robust feature comparison building blocks.

Feature maps are (channels, height, width) float32 arrays.  The pieces here
compose into a small reference-vs-distorted scorer:

* ``l2_pool``: anti-aliased downsampling, the square root of a Hanning-blurred
  squared signal, which keeps responses stable under one-pixel shifts where a
  max pool would jump.
* ``swd``: windowed best-match differencing; each position is compared against
  the closest feature vector within a (2d+1)^2 neighborhood instead of only
  the corresponding cell, tolerating small spatial misalignment.
* ``backbone_forward`` / ``swdn_score``: a five-stage convolutional feature
  extractor with pluggable weights and per-stage regression heads whose
  outputs sum to the final similarity score.
* ``PreferenceHead`` / ``preference_loss``: the two-score-to-probability
  network and its ranking cross-entropy loss used when fitting score scales
  to pairwise human preferences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import Image, _LUMA_WEIGHTS

__all__ = [
    "WeightError",
    "WeightBundle",
    "l2_pool",
    "max_pool",
    "swd",
    "backbone_forward",
    "swdn_score",
    "PreferenceHead",
    "preference_loss",
    "default_weight_bundle",
    "DEFAULT_WEIGHT_SEED",
    "BACKBONE_CHANNELS",
]

L2_POOL_EPSILON = 1e-12
PROBABILITY_FLOOR = 1e-7

# Five conv stages; features are collected after each stage's rectifier and
# pooled (stride 2) between stages, so spatial dims halve stage over stage.
BACKBONE_INPUT_CHANNELS = 3
BACKBONE_CHANNELS = (16, 32, 64, 64, 64)
HEAD_HIDDEN_CHANNELS = 16

# Seed for the hermetic default weights; any externally trained bundle with
# the same manifest drops in through WeightBundle.load.
DEFAULT_WEIGHT_SEED = 1400


class WeightError(ValueError):
    """A named tensor is missing or has the wrong shape."""

    def __init__(self, tensor: str, message: str):
        super().__init__(message)
        self.tensor = tensor


@dataclass
class WeightBundle:
    """Named float32 tensors plus the manifest used to validate them."""

    tensors: dict[str, np.ndarray]

    def require(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        tensor = self.tensors.get(name)
        if tensor is None:
            raise WeightError(name, f"weight bundle is missing tensor {name!r}")
        if tensor.shape != shape:
            raise WeightError(
                name, f"tensor {name!r} has shape {tensor.shape}, expected {shape}"
            )
        return tensor

    def save(self, directory: str | Path) -> None:
        """Write manifest.json plus one raw little-endian float32 file per tensor."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {}
        for name, tensor in self.tensors.items():
            manifest[name] = {"shape": list(tensor.shape), "dtype": "f32"}
            (directory / f"{name}.f32").write_bytes(
                np.ascontiguousarray(tensor, dtype="<f4").tobytes()
            )
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: str | Path) -> "WeightBundle":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        tensors = {}
        for name, meta in manifest.items():
            if meta.get("dtype") != "f32":
                raise WeightError(name, f"tensor {name!r} has unsupported dtype {meta.get('dtype')}")
            shape = tuple(meta["shape"])
            path = directory / f"{name}.f32"
            if not path.exists():
                raise WeightError(name, f"tensor file missing for {name!r}")
            flat = np.frombuffer(path.read_bytes(), dtype="<f4")
            expected = int(np.prod(shape)) if shape else 1
            if flat.size != expected:
                raise WeightError(
                    name, f"tensor {name!r} holds {flat.size} values, expected {expected}"
                )
            tensors[name] = flat.reshape(shape).astype(np.float32)
        return cls(tensors=tensors)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def _hanning_taps(kernel_size: int) -> np.ndarray:
    taps = np.hanning(kernel_size)
    return (taps / taps.sum()).astype(np.float64)


def _pad_symmetric(plane: np.ndarray, radius: int) -> np.ndarray:
    return np.pad(plane, ((radius, radius), (radius, radius)), mode="symmetric")


def _separable_same(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    radius = len(taps) // 2
    padded = _pad_symmetric(plane, radius)
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(taps), axis=0)
    rows = windows @ taps  # height reduced to original, width still padded
    windows = np.lib.stride_tricks.sliding_window_view(rows, len(taps), axis=1)
    return windows @ taps


def _check_feature_map(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    if f.ndim != 3:
        raise ValueError(f"feature map must be (channels, height, width), got {f.shape}")
    return f


def l2_pool(f: np.ndarray, kernel_size: int = 5, stride: int = 2) -> np.ndarray:
    """Energy pooling: sqrt of the Hanning-blurred squared signal, then stride.

    The unit-sum window preserves constant maps exactly and the blur keeps
    the downsampled response stable under small shifts.  Output spatial dims
    are ceil(input / stride).
    """
    f = _check_feature_map(f)
    if kernel_size % 2 == 0 or kernel_size < 3:
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    taps = _hanning_taps(kernel_size)
    out = []
    for channel in f.astype(np.float64):
        blurred = _separable_same(channel * channel, taps)
        out.append(np.sqrt(blurred[::stride, ::stride] + L2_POOL_EPSILON))
    return np.stack(out).astype(np.float32)


def max_pool(f: np.ndarray, kernel_size: int = 5, stride: int = 2) -> np.ndarray:
    """Window-maximum pooling with the same geometry as :func:`l2_pool`."""
    f = _check_feature_map(f)
    if kernel_size % 2 == 0 or kernel_size < 3:
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    radius = kernel_size // 2
    out = []
    for channel in f:
        padded = _pad_symmetric(channel, radius)
        windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel_size, kernel_size))
        out.append(windows.max(axis=(2, 3))[::stride, ::stride])
    return np.stack(out)


# ---------------------------------------------------------------------------
# Space warping difference
# ---------------------------------------------------------------------------


def swd(f_a: np.ndarray, f_b: np.ndarray, d: int = 3) -> np.ndarray:
    """Windowed best-match difference between two equally shaped feature maps.

    At each position the output is ``f_a`` minus the ``f_b`` vector with the
    smallest channel-wise Euclidean distance within the (2d+1)^2 window
    around the corresponding position (window clipped at borders).  Distance
    ties prefer the smallest offset magnitude (|dy| + |dx|), then row-major
    candidate order.
    """
    f_a = _check_feature_map(f_a)
    f_b = _check_feature_map(f_b)
    if f_a.shape != f_b.shape:
        raise ValueError(f"shape mismatch: {f_a.shape} vs {f_b.shape}")
    if d < 0:
        raise ValueError(f"search radius must be >= 0, got {d}")
    if d == 0:
        return f_a - f_b
    _, height, width = f_a.shape
    a64 = f_a.astype(np.float64)
    b64 = f_b.astype(np.float64)
    best_dist = np.full((height, width), np.inf)
    best_dy = np.zeros((height, width), dtype=np.intp)
    best_dx = np.zeros((height, width), dtype=np.intp)
    offsets = sorted(
        ((dy, dx) for dy in range(-d, d + 1) for dx in range(-d, d + 1)),
        key=lambda o: (abs(o[0]) + abs(o[1]), o[0], o[1]),
    )
    for dy, dx in offsets:
        dst_y = slice(max(0, -dy), min(height, height - dy))
        dst_x = slice(max(0, -dx), min(width, width - dx))
        src_y = slice(max(0, dy), min(height, height + dy))
        src_x = slice(max(0, dx), min(width, width + dx))
        diff = a64[:, dst_y, dst_x] - b64[:, src_y, src_x]
        dist = np.sum(diff * diff, axis=0)
        window = best_dist[dst_y, dst_x]
        better = dist < window
        window[better] = dist[better]
        best_dist[dst_y, dst_x] = window
        sub_dy = best_dy[dst_y, dst_x]
        sub_dy[better] = dy
        best_dy[dst_y, dst_x] = sub_dy
        sub_dx = best_dx[dst_y, dst_x]
        sub_dx[better] = dx
        best_dx[dst_y, dst_x] = sub_dx
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return f_a - f_b[:, ys + best_dy, xs + best_dx]


# ---------------------------------------------------------------------------
# Backbone and scorer
# ---------------------------------------------------------------------------


def _conv2d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 convolution with symmetric padding: (C_in,H,W) -> (C_out,H,W)."""
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    return np.einsum("chwkl,ockl->ohw", windows, kernel, optimize=True) + bias[:, None, None]


def _image_to_input(img: Image) -> np.ndarray:
    planes = img.pixels.transpose(2, 0, 1).astype(np.float32)
    if img.channels == BACKBONE_INPUT_CHANNELS:
        return planes
    if img.channels == 1:
        return np.repeat(planes, BACKBONE_INPUT_CHANNELS, axis=0)
    luma = (img.pixels.astype(np.float64) @ _LUMA_WEIGHTS).astype(np.float32)
    return np.repeat(luma[np.newaxis], BACKBONE_INPUT_CHANNELS, axis=0)


def _stage_shapes() -> list[tuple[str, tuple[int, ...]]]:
    shapes: list[tuple[str, tuple[int, ...]]] = []
    c_in = BACKBONE_INPUT_CHANNELS
    for i, c_out in enumerate(BACKBONE_CHANNELS, start=1):
        shapes.append((f"conv{i}_kernel", (c_out, c_in, 3, 3)))
        shapes.append((f"conv{i}_bias", (c_out,)))
        shapes.append((f"head{i}_conv1_kernel", (HEAD_HIDDEN_CHANNELS, c_out, 3, 3)))
        shapes.append((f"head{i}_conv1_bias", (HEAD_HIDDEN_CHANNELS,)))
        shapes.append((f"head{i}_conv2_kernel", (1, HEAD_HIDDEN_CHANNELS, 3, 3)))
        shapes.append((f"head{i}_conv2_bias", (1,)))
        c_in = c_out
    return shapes


def backbone_forward(
    img: Image, weights: WeightBundle, pooling: str = "l2"
) -> list[np.ndarray]:
    """Run the five-stage feature extractor; returns features per stage.

    Every stage is convolution + rectifier; between stages the map is pooled
    with stride 2 (``pooling`` selects the energy pool or, for comparisons, a
    plain max pool), so stage ``i+1`` has ceil-half the spatial size of stage
    ``i``.
    """
    if pooling not in ("l2", "max"):
        raise ValueError(f"pooling must be 'l2' or 'max', got {pooling!r}")
    pool = l2_pool if pooling == "l2" else max_pool
    x = _image_to_input(img)
    features = []
    for i in range(1, len(BACKBONE_CHANNELS) + 1):
        c_out = BACKBONE_CHANNELS[i - 1]
        c_in = x.shape[0]
        kernel = weights.require(f"conv{i}_kernel", (c_out, c_in, 3, 3))
        bias = weights.require(f"conv{i}_bias", (c_out,))
        x = np.maximum(_conv2d_same(x, kernel, bias), 0.0).astype(np.float32)
        features.append(x)
        if i < len(BACKBONE_CHANNELS):
            x = pool(x, kernel_size=5, stride=2).astype(np.float32)
    return features


def _head_score(diff: np.ndarray, weights: WeightBundle, stage: int) -> float:
    c_in = diff.shape[0]
    k1 = weights.require(f"head{stage}_conv1_kernel", (HEAD_HIDDEN_CHANNELS, c_in, 3, 3))
    b1 = weights.require(f"head{stage}_conv1_bias", (HEAD_HIDDEN_CHANNELS,))
    k2 = weights.require(f"head{stage}_conv2_kernel", (1, HEAD_HIDDEN_CHANNELS, 3, 3))
    b2 = weights.require(f"head{stage}_conv2_bias", (1,))
    hidden = np.maximum(_conv2d_same(diff.astype(np.float32), k1, b1), 0.0)
    return float(np.mean(_conv2d_same(hidden, k2, b2)))


def swdn_score(
    ref: Image,
    dist: Image,
    weights: WeightBundle,
    d: int = 3,
    pooling: str = "l2",
) -> float:
    """Perceptual difference score: per-stage head outputs on windowed
    best-match feature differences, summed over the five stages.

    Zero for identical inputs when head biases are zero; grows with the
    amount of feature-space disagreement the window search cannot explain
    away.
    """
    if not ref.same_shape(dist):
        raise ValueError(
            f"shape mismatch: reference {ref.pixels.shape} vs distorted {dist.pixels.shape}"
        )
    feats_ref = backbone_forward(ref, weights, pooling=pooling)
    feats_dist = backbone_forward(dist, weights, pooling=pooling)
    total = 0.0
    for stage, (f_a, f_b) in enumerate(zip(feats_ref, feats_dist), start=1):
        total += _head_score(swd(f_a, f_b, d), weights, stage)
    return total


# ---------------------------------------------------------------------------
# Preference head and ranking loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreferenceHead:
    """Two 32-unit rectified layers, then a logistic unit over a score pair."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        for name, tensor, shape in (
            ("w1", self.w1, (32, 2)),
            ("b1", self.b1, (32,)),
            ("w2", self.w2, (32, 32)),
            ("b2", self.b2, (32,)),
            ("w_out", self.w_out, (1, 32)),
            ("b_out", self.b_out, (1,)),
        ):
            if tensor.shape != shape:
                raise WeightError(name, f"{name} has shape {tensor.shape}, expected {shape}")
            if not np.isfinite(tensor).all():
                raise WeightError(name, f"{name} holds non-finite values")

    def probability(self, score_a: float, score_b: float) -> float:
        """Predicted probability, in (0, 1), that the first item is preferred."""
        x = np.array([score_a, score_b], dtype=np.float64)
        x = np.maximum(self.w1 @ x + self.b1, 0.0)
        x = np.maximum(self.w2 @ x + self.b2, 0.0)
        logit = float((self.w_out @ x + self.b_out)[0])
        if logit >= 0:
            p = 1.0 / (1.0 + math.exp(-logit))
        else:
            z = math.exp(logit)
            p = z / (1.0 + z)
        # keep the logistic output strictly inside (0, 1) even when the
        # logit saturates in floats
        if p >= 1.0:
            return math.nextafter(1.0, 0.0)
        if p <= 0.0:
            return math.nextafter(0.0, 1.0)
        return p

    @classmethod
    def zeros(cls) -> "PreferenceHead":
        """All-zero head: emits probability 0.5 for every score pair."""
        return cls(
            w1=np.zeros((32, 2), np.float32),
            b1=np.zeros(32, np.float32),
            w2=np.zeros((32, 32), np.float32),
            b2=np.zeros(32, np.float32),
            w_out=np.zeros((1, 32), np.float32),
            b_out=np.zeros(1, np.float32),
        )

    @classmethod
    def seeded(cls, seed: int) -> "PreferenceHead":
        rng = np.random.default_rng(seed)
        scale = math.sqrt(2.0 / 32.0)
        return cls(
            w1=rng.normal(0.0, 1.0, (32, 2)).astype(np.float32),
            b1=np.zeros(32, np.float32),
            w2=rng.normal(0.0, scale, (32, 32)).astype(np.float32),
            b2=np.zeros(32, np.float32),
            w_out=rng.normal(0.0, scale, (1, 32)).astype(np.float32),
            b_out=np.zeros(1, np.float32),
        )


def preference_loss(
    score_a: float, score_b: float, h: float, head: PreferenceHead
) -> float:
    """Ranking cross entropy between the head's prediction and preference ``h``.

    ``h`` is the observed probability that the first item is preferred.  The
    predicted probability is clamped away from 0 and 1 so the loss stays
    finite.
    """
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"preference h must lie in [0, 1], got {h}")
    p = head.probability(score_a, score_b)
    p = min(max(p, PROBABILITY_FLOOR), 1.0 - PROBABILITY_FLOOR)
    return -h * math.log(p) - (1.0 - h) * math.log(1.0 - p)


# ---------------------------------------------------------------------------
# Default weights
# ---------------------------------------------------------------------------


def default_weight_bundle(seed: int = DEFAULT_WEIGHT_SEED) -> WeightBundle:
    """Seeded random weights matching the declared architecture.

    Convolution kernels use scaled normal initialization with zero biases.
    Each head's output layer uses non-negative weights so the per-stage score
    acts as a magnitude of feature disagreement (zero at identical inputs,
    growing with distortion strength).  The preference-head tensors ride along
    under ``pref_*`` names.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in _stage_shapes():
        if name.endswith("_bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        elif "head" in name and "conv2" in name:
            fan_in = shape[1] * shape[2] * shape[3]
            tensors[name] = np.abs(
                rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
            ).astype(np.float32)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape).astype(
                np.float32
            )
    head = PreferenceHead.seeded(seed)
    tensors["pref_fc1_weight"] = head.w1
    tensors["pref_fc1_bias"] = head.b1
    tensors["pref_fc2_weight"] = head.w2
    tensors["pref_fc2_bias"] = head.b2
    tensors["pref_out_weight"] = head.w_out
    tensors["pref_out_bias"] = head.b_out
    return WeightBundle(tensors=tensors)
