import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqbench.benchmark import (
    BenchmarkManifest,
    FitError,
    StatisticError,
    krcc,
    plcc_poly3,
    run_benchmark,
    saturation_diagnostic,
    srcc,
)
from pqbench.distortions import gaussian_noise
from pqbench.imaging import save_image

from conftest import make_smooth


# -- independent oracles -----------------------------------------------------


def ranks_brute(values):
    out = []
    for v in values:
        smaller = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        out.append(1.0 + smaller + (equal - 1) / 2.0)
    return out


def pearson_brute(xs, ys):
    n = len(xs)
    mx = float(np.sum(np.asarray(xs, dtype=np.float64))) / n
    my = float(np.sum(np.asarray(ys, dtype=np.float64))) / n
    sxy = sxx = syy = 0.0
    for a, b in zip(xs, ys):
        sxy += (a - mx) * (b - my)
        sxx += (a - mx) * (a - mx)
        syy += (b - my) * (b - my)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroDivisionError("degenerate variance")
    return sxy / math.sqrt(sxx * syy)


def srcc_brute(xs, ys):
    return pearson_brute(ranks_brute(xs), ranks_brute(ys))


def krcc_brute(xs, ys):
    n = len(xs)
    num = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            sx = (xs[i] > xs[j]) - (xs[i] < xs[j])
            sy = (ys[i] > ys[j]) - (ys[i] < ys[j])
            num += sx * sy
            ties_x += sx == 0
            ties_y += sy == 0
    n0 = n * (n - 1) // 2
    return num / math.sqrt((n0 - ties_x) * (n0 - ties_y))


class TestSrcc:
    def test_perfect_monotone(self):
        assert srcc([1, 2, 3, 4], [10, 20, 21, 40]) == 1.0

    def test_worked_example(self):
        # d = (rank differences) = (2, 1, 1): 1 - 6*6/(3*8) = -0.5
        assert srcc([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5)

    def test_brute_force_oracle_exact(self):
        rng = np.random.default_rng(77)
        for _ in range(300):
            n = int(rng.integers(2, 9))
            xs = rng.integers(0, 6, size=n).tolist()
            ys = rng.integers(0, 6, size=n).tolist()
            try:
                expected = srcc_brute(xs, ys)
            except ZeroDivisionError:
                with pytest.raises(StatisticError):
                    srcc(xs, ys)
                continue
            assert srcc(xs, ys) == expected

    def test_monotone_transform_invariance_exact(self):
        rng = np.random.default_rng(3)
        xs = rng.random(40)
        ys = rng.random(40)
        base = srcc(xs, ys)
        assert srcc(np.exp(xs), ys) == base
        assert srcc(xs, 3.0 * ys + 2.0) == base

    def test_errors(self):
        with pytest.raises(StatisticError):
            srcc([1.0], [2.0])
        with pytest.raises(StatisticError):
            srcc([1, 2], [1, 2, 3])
        with pytest.raises(StatisticError):
            srcc([5, 5, 5], [1, 2, 3])

    def test_reordering_pairs_leaves_statistics_unchanged(self):
        rng = np.random.default_rng(19)
        xs = rng.random(25)
        ys = rng.random(25)
        order = rng.permutation(25)
        assert srcc(xs[order], ys[order]) == pytest.approx(srcc(xs, ys), abs=1e-12)
        assert krcc(xs[order], ys[order]) == pytest.approx(krcc(xs, ys), abs=1e-12)
        p_before, _ = plcc_poly3(xs, ys)
        p_after, _ = plcc_poly3(xs[order], ys[order])
        assert p_after == pytest.approx(p_before, abs=1e-10)


class TestKrcc:
    def test_reversed_order(self):
        assert krcc([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0

    def test_worked_example(self):
        assert krcc([1, 2, 3], [3, 1, 2]) == pytest.approx(-1 / 3)

    def test_brute_force_oracle_exact(self):
        rng = np.random.default_rng(78)
        for _ in range(300):
            n = int(rng.integers(2, 9))
            xs = rng.integers(0, 6, size=n).tolist()
            ys = rng.integers(0, 6, size=n).tolist()
            try:
                expected = krcc_brute(xs, ys)
            except ZeroDivisionError:
                with pytest.raises(StatisticError):
                    krcc(xs, ys)
                continue
            assert krcc(xs, ys) == expected

    @given(
        st.lists(st.integers(min_value=-50, max_value=50), min_size=2, max_size=30),
        st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_self_correlation_is_one(self, xs, data):
        if len(set(xs)) < 2:
            return
        assert krcc(xs, xs) == pytest.approx(1.0)
        assert srcc(xs, xs) == pytest.approx(1.0)


class TestPlcc:
    def test_exact_cubic(self):
        x = np.linspace(0.2, 1.8, 16)
        plcc, coeffs = plcc_poly3(x, 2.0 * x**3)
        assert plcc == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(coeffs, [0, 0, 0, 2.0], atol=1e-9)

    def test_linear_nested(self):
        x = np.linspace(0.0, 5.0, 12)
        plcc, _ = plcc_poly3(x, -x)
        assert plcc == pytest.approx(1.0, abs=1e-12)

    def test_normal_equation_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.random(10) * 3.0
        y = 1.5 - 0.5 * x + 0.25 * x**2 + 0.1 * x**3 + rng.normal(0, 0.05, 10)
        _, coeffs = plcc_poly3(x, y)
        design = np.vander(x, 4, increasing=True)
        oracle = np.linalg.solve(design.T @ design, design.T @ y)
        np.testing.assert_allclose(coeffs, oracle, atol=1e-8)

    def test_affine_rescale_invariance(self):
        rng = np.random.default_rng(13)
        x = rng.random(30)
        y = rng.random(30)
        a, _ = plcc_poly3(x, y)
        b, _ = plcc_poly3(40.0 * x - 7.0, y)
        assert a == pytest.approx(b, abs=1e-8)

    def test_rank_deficiency(self):
        x = np.array([1.0, 1.0, 2.0, 2.0, 3.0, 3.0])  # only 3 distinct values
        with pytest.raises(FitError):
            plcc_poly3(x, np.arange(6.0))

    def test_preconditions(self):
        with pytest.raises(StatisticError):
            plcc_poly3([1, 2, 3, 4], [1, 2, 3, 4])
        with pytest.raises(StatisticError):
            plcc_poly3([2, 2, 2, 2, 2], [1, 2, 3, 4, 5])


class TestSaturation:
    def test_linear_not_flagged(self):
        x = np.linspace(0.1, 2.0, 12)
        _, coeffs = plcc_poly3(x, 3 * x + 1)
        assert not saturation_diagnostic(x, 3 * x + 1, coeffs).flagged

    def test_constant_top_half_flagged(self):
        mos = np.linspace(0, 1, 40)
        objective = np.minimum(mos, 0.5)
        _, coeffs = plcc_poly3(objective, mos)
        assert saturation_diagnostic(objective, mos, coeffs).flagged

    def test_saturated_cloud_flagged(self):
        # strong trend at the low end, then the metric pins every good image
        # near one score while subjective quality keeps varying
        rng = np.random.default_rng(7)
        mos = np.concatenate([np.linspace(0.0, 0.6, 40), 0.55 + 0.45 * rng.random(60)])
        objective = np.concatenate(
            [np.linspace(0.0, 0.6, 40), 0.98 + 0.02 * rng.random(60)]
        )
        plcc, coeffs = plcc_poly3(objective, mos)
        report = saturation_diagnostic(objective, mos, coeffs)
        assert report.flagged
        assert plcc > 0.8  # the very regime where the index overestimates


# -- manifests and grouped reports -------------------------------------------


@pytest.fixture
def image_manifest(tmp_path):
    """Small on-disk dataset: mos strictly decreasing in noise level."""
    ref = make_smooth((32, 32), seed=55)
    save_image(tmp_path / "ref.png", ref)
    rows = []
    sigmas = [2, 4, 5, 7, 8, 10, 12, 14, 16, 18, 20, 22, 25, 27, 30, 33, 36, 40, 44, 48]
    for i, sigma in enumerate(sigmas):
        dist = gaussian_noise(ref, sigma, seed=100 + i)
        name = f"dist{i}.png"
        save_image(tmp_path / name, dist)
        mos = 100.0 - float(sigma)
        rows.append(("ref.png", name, mos, f"noise{sigma}", "traditional"))
    path = tmp_path / "manifest.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ref_path", "dist_path", "mos", "distortion_type", "subtype"])
        writer.writerows(rows)
    return path


class TestManifest:
    def test_load_and_group(self, image_manifest):
        manifest = BenchmarkManifest.load(image_manifest)
        assert len(manifest.rows) == 20
        assert manifest.rows[0].subtype == "traditional"

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            BenchmarkManifest.load(path)

    def test_score_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(
            "ref_path,dist_path,mos,distortion_type,subtype,score:ext\n"
            "r.png,d.png,5.0,noise,traditional,0.25\n"
        )
        manifest = BenchmarkManifest.load(path)
        assert manifest.rows[0].precomputed == {"ext": 0.25}


class TestRunBenchmark:
    def test_monotone_noise_gives_perfect_srcc(self, image_manifest):
        manifest = BenchmarkManifest.load(image_manifest)
        report = run_benchmark(manifest, ["psnr"], group_by="subtype")
        cell = report.cells[0]
        assert cell.group == "traditional"
        assert cell.n == 20
        assert cell.srcc == 1.0
        assert cell.krcc == 1.0
        assert cell.plcc is not None and cell.plcc > 0.9
        assert not report.errors

    def test_shuffled_mos_loses_correlation(self, image_manifest, tmp_path):
        manifest = BenchmarkManifest.load(image_manifest)
        rng = np.random.default_rng(1)
        shuffled = rng.permutation([row.mos for row in manifest.rows])
        rows = [
            type(row)(row.ref_path, row.dist_path, float(m), row.distortion_type, row.subtype)
            for row, m in zip(manifest.rows, shuffled)
        ]
        manifest.rows = rows
        report = run_benchmark(manifest, ["psnr"], group_by="all")
        assert abs(report.cells[0].srcc) < 0.3

    def test_precomputed_column_matches_in_process(self, image_manifest, tmp_path):
        manifest = BenchmarkManifest.load(image_manifest)
        live = run_benchmark(manifest, ["psnr"], group_by="subtype")
        # rewrite the manifest with psnr as a precomputed column and no images
        from pqbench.imaging import load_image
        from pqbench.metrics import psnr as psnr_fn

        lines = ["ref_path,dist_path,mos,distortion_type,subtype,score:psnr"]
        for row in manifest.rows:
            value = psnr_fn(
                load_image(manifest.resolve(row.ref_path)),
                load_image(manifest.resolve(row.dist_path)),
            ).value
            lines.append(
                f"missing.png,missing.png,{row.mos},{row.distortion_type},{row.subtype},{value!r}"
            )
        path = tmp_path / "pre.csv"
        path.write_text("\n".join(lines) + "\n")
        pre = run_benchmark(BenchmarkManifest.load(path), ["psnr"], group_by="subtype")
        assert pre.cells[0].srcc == live.cells[0].srcc
        assert pre.cells[0].krcc == live.cells[0].krcc
        assert pre.cells[0].plcc == pytest.approx(live.cells[0].plcc, abs=1e-12)

    def test_small_group_omits_plcc(self, tmp_path):
        lines = ["ref_path,dist_path,mos,distortion_type,subtype,score:ext"]
        for i in range(4):
            lines.append(f"x,y,{i}.0,t,small,{i * 0.1}")
        path = tmp_path / "m.csv"
        path.write_text("\n".join(lines) + "\n")
        report = run_benchmark(BenchmarkManifest.load(path), ["ext"], group_by="subtype")
        cell = report.cells[0]
        assert cell.srcc == 1.0 and cell.plcc is None

    def test_row_errors_collected(self, tmp_path):
        lines = ["ref_path,dist_path,mos,distortion_type,subtype"]
        for i in range(3):
            lines.append(f"nope{i}.png,nope{i}.png,{i}.0,t,s")
        path = tmp_path / "m.csv"
        path.write_text("\n".join(lines) + "\n")
        report = run_benchmark(BenchmarkManifest.load(path), ["psnr"], group_by="all")
        assert len(report.errors) == 3
        assert not report.cells

    def test_report_serialization(self, image_manifest):
        manifest = BenchmarkManifest.load(image_manifest)
        report = run_benchmark(manifest, ["psnr", "ssim"], group_by="subtype")
        payload = json.loads(report.to_json())
        assert payload["group_by"] == "subtype"
        assert {c["metric"] for c in payload["cells"]} == {"psnr", "ssim"}
        table = report.format_table()
        assert "SRCC" in table and "psnr" in table and "traditional" in table
