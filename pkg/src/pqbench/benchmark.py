"""Correlation statistics and dataset benchmarking.

The evaluation statistics are the usual agreement measures between objective
metric scores and subjective mean opinion scores: Spearman rank correlation
with average ranks for ties, Kendall tau-b, and Pearson correlation computed
after a third-order polynomial regression of MOS on the objective score.  A
saturation diagnostic flags groups where the fitted curve goes horizontal for
the best-rated images, a regime in which the Pearson value overstates how
well the metric separates high-quality images.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .imaging import load_image

__all__ = [
    "StatisticError",
    "FitError",
    "srcc",
    "krcc",
    "plcc_poly3",
    "saturation_diagnostic",
    "SaturationReport",
    "ManifestRow",
    "BenchmarkManifest",
    "CorrelationCell",
    "CorrelationReport",
    "run_benchmark",
]

MANIFEST_COLUMNS = ("ref_path", "dist_path", "mos", "distortion_type", "subtype")
SCORE_COLUMN_PREFIX = "score:"
MIN_ROWS_FOR_PLCC = 5


class StatisticError(ValueError):
    """A correlation statistic is undefined for the given inputs."""


class FitError(ValueError):
    """The polynomial regression could not be solved."""


def _paired(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or ys.ndim != 1:
        raise StatisticError("inputs must be 1-D sequences")
    if len(xs) != len(ys):
        raise StatisticError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise StatisticError("need at least two pairs")
    return xs, ys


def average_ranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks starting at 1; tied values share the mean of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(xs: np.ndarray, ys: np.ndarray) -> float:
    dx = xs - np.sum(xs) / len(xs)
    dy = ys - np.sum(ys) / len(ys)
    var_x = np.sum(dx * dx)
    var_y = np.sum(dy * dy)
    if var_x == 0.0 or var_y == 0.0:
        raise StatisticError("zero variance leaves the correlation undefined")
    return float(np.sum(dx * dy) / np.sqrt(var_x * var_y))


def srcc(xs, ys) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    xs, ys = _paired(xs, ys)
    return _pearson(average_ranks(xs), average_ranks(ys))


def krcc(xs, ys) -> float:
    """Kendall rank correlation, tau-b (tie corrected)."""
    xs, ys = _paired(xs, ys)
    n = len(xs)
    num = 0
    tied_x = 0
    tied_y = 0
    block = 512
    for start in range(0, n, block):
        stop = min(start + block, n)
        sx = np.sign(xs[start:stop, np.newaxis] - xs[np.newaxis, :])
        sy = np.sign(ys[start:stop, np.newaxis] - ys[np.newaxis, :])
        # keep only pairs (i, j) with i < j
        cols = np.arange(n)[np.newaxis, :]
        upper = cols > np.arange(start, stop)[:, np.newaxis]
        num += int(np.sum((sx * sy)[upper]))
        tied_x += int(np.sum((sx == 0) & upper))
        tied_y += int(np.sum((sy == 0) & upper))
    n0 = n * (n - 1) // 2
    denom_sq = (n0 - tied_x) * (n0 - tied_y)
    if denom_sq == 0:
        raise StatisticError("zero rank variance leaves tau undefined")
    return float(num / np.sqrt(denom_sq))


def plcc_poly3(objective, mos) -> tuple[float, np.ndarray]:
    """Pearson correlation after a cubic least-squares regression of MOS on score.

    The fit runs on a standardized score axis for conditioning and the
    returned four coefficients are mapped back to the raw axis, lowest power
    first.  Raises :class:`FitError` when the design matrix is rank deficient
    (fewer than four distinct score values).
    """
    xs, ys = _paired(objective, mos)
    if len(xs) < MIN_ROWS_FOR_PLCC:
        raise StatisticError(f"need at least {MIN_ROWS_FOR_PLCC} pairs, got {len(xs)}")
    center = float(np.mean(xs))
    scale = float(np.std(xs))
    if scale == 0.0:
        raise StatisticError("objective scores are constant")
    z = (xs - center) / scale
    design = np.column_stack([np.ones_like(z), z, z * z, z**3])
    beta, _, rank, _ = np.linalg.lstsq(design, ys, rcond=None)
    if rank < 4:
        raise FitError(f"rank-deficient cubic design (rank {rank})")
    fitted = design @ beta
    # Expand beta over z = (x - center)/scale into raw-axis coefficients.
    base = np.polynomial.Polynomial([-center / scale, 1.0 / scale])
    poly = sum(
        (np.polynomial.Polynomial([b]) * base**k for k, b in enumerate(beta)),
        start=np.polynomial.Polynomial([0.0]),
    )
    coeffs = np.zeros(4, dtype=np.float64)
    coeffs[: len(poly.coef)] = poly.coef
    return _pearson(fitted, ys), coeffs


@dataclass(frozen=True)
class SaturationReport:
    flagged: bool
    top_slope: float
    median_slope: float
    threshold: float
    mos_quantile: float


def saturation_diagnostic(
    objective,
    mos,
    coeffs,
    threshold: float = 0.10,
    mos_quantile: float = 0.75,
) -> SaturationReport:
    """Detect a horizontal fitted curve over the best-rated samples.

    The secant slope of the fitted cubic across the objective-score span of
    the top MOS quantile is compared against the curve's median absolute slope
    over the full objective range (measured on a uniform grid, so that dense
    sample clusters do not skew it); falling below ``threshold`` times the
    median marks the Pearson value for this group as untrustworthy.
    """
    xs, ys = _paired(objective, mos)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    derivative = np.polynomial.Polynomial(coeffs).deriv()
    grid = np.linspace(float(np.min(xs)), float(np.max(xs)), 101)
    median_slope = float(np.median(np.abs(derivative(grid))))
    top = xs[ys >= np.quantile(ys, mos_quantile)]
    lo, hi = float(np.min(top)), float(np.max(top))
    if hi > lo:
        poly = np.polynomial.Polynomial(coeffs)
        top_slope = abs(float(poly(hi) - poly(lo))) / (hi - lo)
    else:
        top_slope = 0.0
    return SaturationReport(
        flagged=bool(top_slope < threshold * median_slope),
        top_slope=top_slope,
        median_slope=median_slope,
        threshold=threshold,
        mos_quantile=mos_quantile,
    )


# ---------------------------------------------------------------------------
# Manifests and grouped reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    ref_path: str
    dist_path: str
    mos: float
    distortion_type: str
    subtype: str
    precomputed: dict = field(default_factory=dict)


@dataclass
class BenchmarkManifest:
    rows: list[ManifestRow]
    base_dir: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkManifest":
        """Read the manifest CSV.

        Header: ``ref_path,dist_path,mos,distortion_type,subtype`` followed by
        any number of ``score:<metric>`` columns with precomputed values.
        """
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty manifest") from None
            header = [h.strip() for h in header]
            if tuple(header[: len(MANIFEST_COLUMNS)]) != MANIFEST_COLUMNS:
                raise ValueError(
                    f"{path}: manifest header must start with {','.join(MANIFEST_COLUMNS)}"
                )
            score_names = []
            for extra in header[len(MANIFEST_COLUMNS) :]:
                if not extra.startswith(SCORE_COLUMN_PREFIX):
                    raise ValueError(f"{path}: unexpected manifest column {extra!r}")
                score_names.append(extra[len(SCORE_COLUMN_PREFIX) :])
            rows = []
            for line_no, record in enumerate(reader, start=2):
                if not record:
                    continue
                if len(record) != len(header):
                    raise ValueError(f"{path}:{line_no}: expected {len(header)} fields")
                precomputed = {}
                for name, cell in zip(score_names, record[len(MANIFEST_COLUMNS) :]):
                    cell = cell.strip()
                    if cell:
                        precomputed[name] = float(cell)
                rows.append(
                    ManifestRow(
                        ref_path=record[0],
                        dist_path=record[1],
                        mos=float(record[2]),
                        distortion_type=record[3],
                        subtype=record[4],
                        precomputed=precomputed,
                    )
                )
        return cls(rows=rows, base_dir=path.parent)

    def resolve(self, relative: str) -> Path:
        p = Path(relative)
        if not p.is_absolute() and self.base_dir is not None:
            return self.base_dir / p
        return p


@dataclass(frozen=True)
class CorrelationCell:
    metric: str
    group: str
    n: int
    srcc: float | None
    krcc: float | None
    plcc: float | None
    coeffs: tuple | None
    saturated: bool | None


@dataclass
class CorrelationReport:
    group_by: str
    cells: list[CorrelationCell]
    errors: list[str]

    def to_json(self) -> str:
        payload = {
            "group_by": self.group_by,
            "cells": [
                {
                    "metric": c.metric,
                    "group": c.group,
                    "n": c.n,
                    "srcc": c.srcc,
                    "krcc": c.krcc,
                    "plcc": c.plcc,
                    "coeffs": list(c.coeffs) if c.coeffs is not None else None,
                    "saturated": c.saturated,
                }
                for c in self.cells
            ],
            "errors": self.errors,
        }
        return json.dumps(payload, indent=2, sort_keys=False)

    def format_table(self) -> str:
        """Aligned text tables, one per statistic, metrics as rows and groups as columns."""
        groups = sorted({c.group for c in self.cells})
        metric_names = []
        for c in self.cells:
            if c.metric not in metric_names:
                metric_names.append(c.metric)
        by_key = {(c.metric, c.group): c for c in self.cells}
        lines = []
        for stat in ("srcc", "krcc", "plcc"):
            lines.append(f"{stat.upper()} (grouped by {self.group_by})")
            width = max([len(m) for m in metric_names] + [6])
            head = "metric".ljust(width) + "".join(f"  {g:>16}" for g in groups)
            lines.append(head)
            for m in metric_names:
                row = m.ljust(width)
                for g in groups:
                    cell = by_key.get((m, g))
                    value = getattr(cell, stat) if cell else None
                    if value is None:
                        row += f"  {'-':>16}"
                    else:
                        mark = "*" if stat == "plcc" and cell.saturated else ""
                        row += f"  {value:>15.4f}{mark or ' '}"
                lines.append(row)
            lines.append("")
        if any(c.saturated for c in self.cells if c.saturated is not None):
            lines.append("* fitted curve saturates for top-rated samples; PLCC unreliable")
        errs = "\n".join(self.errors)
        return "\n".join(lines) + (f"\nerrors:\n{errs}\n" if errs else "")


def _group_key(row: ManifestRow, group_by: str) -> str:
    if group_by == "subtype":
        return row.subtype
    if group_by == "distortion_type":
        return row.distortion_type
    if group_by == "all":
        return "all"
    raise ValueError(f"unknown group_by {group_by!r}")


def _row_score(row: ManifestRow, metric: str, manifest: BenchmarkManifest, cache: dict) -> float:
    if metric in row.precomputed:
        return row.precomputed[metric]
    try:
        fn = metrics_mod.METRICS[metric]
    except KeyError:
        raise ValueError(
            f"metric {metric!r} is neither computable in-process nor precomputed"
        ) from None

    def cached(path_str: str):
        path = manifest.resolve(path_str)
        key = str(path)
        if key not in cache:
            cache[key] = load_image(path)
        return cache[key]

    return fn(cached(row.ref_path), cached(row.dist_path)).value


def run_benchmark(
    manifest: BenchmarkManifest,
    metric_names: list[str],
    group_by: str = "subtype",
) -> CorrelationReport:
    """Score every manifest row per metric and correlate against MOS per group.

    Row-level failures (unreadable images, undefined statistics) are collected
    into the report's error list instead of aborting the run.  Groups with
    fewer than five rows omit the regression-based Pearson value.
    """
    errors: list[str] = []
    cache: dict = {}
    cells: list[CorrelationCell] = []
    for metric in metric_names:
        grouped: dict[str, list[tuple[float, float]]] = {}
        for idx, row in enumerate(manifest.rows):
            try:
                score = _row_score(row, metric, manifest, cache)
            except Exception as exc:  # noqa: BLE001 - report and continue
                errors.append(f"row {idx} ({row.dist_path}) metric {metric}: {exc}")
                continue
            grouped.setdefault(_group_key(row, group_by), []).append((score, row.mos))
        for group in sorted(grouped):
            pairs = grouped[group]
            scores = np.array([p[0] for p in pairs])
            mos = np.array([p[1] for p in pairs])
            cell_srcc = cell_krcc = cell_plcc = None
            coeffs = None
            saturated = None
            try:
                cell_srcc = srcc(scores, mos)
                cell_krcc = krcc(scores, mos)
            except StatisticError as exc:
                errors.append(f"group {group!r} metric {metric}: {exc}")
            if len(pairs) >= MIN_ROWS_FOR_PLCC:
                try:
                    cell_plcc, raw_coeffs = plcc_poly3(scores, mos)
                    coeffs = tuple(raw_coeffs)
                    saturated = saturation_diagnostic(scores, mos, raw_coeffs).flagged
                except (StatisticError, FitError) as exc:
                    errors.append(f"group {group!r} metric {metric} plcc: {exc}")
            cells.append(
                CorrelationCell(
                    metric=metric,
                    group=group,
                    n=len(pairs),
                    srcc=cell_srcc,
                    krcc=cell_krcc,
                    plcc=cell_plcc,
                    coeffs=coeffs,
                    saturated=saturated,
                )
            )
    return CorrelationReport(group_by=group_by, cells=cells, errors=errors)
