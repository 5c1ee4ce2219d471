import csv
import json

import numpy as np
import pytest

from pqbench.cli import main
from pqbench.distortions import gaussian_noise
from pqbench.imaging import load_image, save_image

from conftest import make_smooth


@pytest.fixture
def workdir(tmp_path):
    ref = make_smooth((48, 48), seed=61)
    save_image(tmp_path / "ref.png", ref)
    save_image(tmp_path / "dist.png", gaussian_noise(ref, 15, seed=4))
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestMetricCommand:
    def test_identical_prints_inf(self, workdir, capsys):
        code, out, _ = run(
            capsys, "metric", "--metric", "psnr",
            "--ref", workdir / "ref.png", "--dist", workdir / "ref.png",
        )
        assert code == 0
        assert out.strip() == "inf"

    def test_json_format(self, workdir, capsys):
        code, out, _ = run(
            capsys, "metric", "--metric", "ssim", "--format", "json",
            "--ref", workdir / "ref.png", "--dist", workdir / "dist.png",
        )
        payload = json.loads(out)
        assert code == 0
        assert payload["metric"] == "ssim"
        assert 0.0 < payload["value"] < 1.0

    def test_byte_identical_stdout(self, workdir, capsys):
        argv = ("metric", "--metric", "ssim",
                "--ref", workdir / "ref.png", "--dist", workdir / "dist.png")
        _, first, _ = run(capsys, *argv)
        _, second, _ = run(capsys, *argv)
        assert first == second

    def test_missing_file_is_domain_error(self, workdir, capsys):
        code, _, err = run(
            capsys, "metric", "--metric", "psnr",
            "--ref", workdir / "nope.png", "--dist", workdir / "ref.png",
        )
        assert code == 1
        assert "error:" in err


class TestDistortCommand:
    def test_noise_deterministic_per_seed(self, workdir, capsys):
        out_a = workdir / "a.imgf"
        out_b = workdir / "b.imgf"
        for out in (out_a, out_b):
            code, _, _ = run(
                capsys, "distort", "--op", "noise", "--sigma", 10, "--seed", 3,
                "--in", workdir / "ref.png", "--out", out,
            )
            assert code == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_seed_required_for_random_ops(self, workdir, capsys):
        with pytest.raises(SystemExit) as exit_info:
            main(["distort", "--op", "noise", "--sigma", "10",
                  "--in", str(workdir / "ref.png"), "--out", str(workdir / "x.png")])
        assert exit_info.value.code == 2

    def test_blur_needs_no_seed(self, workdir, capsys):
        code, _, _ = run(
            capsys, "distort", "--op", "blur", "--sigma", 1.5,
            "--in", workdir / "ref.png", "--out", workdir / "blurred.png",
        )
        assert code == 0
        assert load_image(workdir / "blurred.png").width == 48

    def test_unknown_flag_usage_error(self, workdir):
        with pytest.raises(SystemExit) as exit_info:
            main(["metric", "--metric", "psnr", "--bogus", "x"])
        assert exit_info.value.code == 2


class TestBenchmarkCommand:
    def test_json_report_structure(self, workdir, capsys, tmp_path):
        rows = [["ref_path", "dist_path", "mos", "distortion_type", "subtype"]]
        for i, sigma in enumerate((5, 10, 15, 20, 25, 30)):
            name = f"d{i}.png"
            save_image(
                workdir / name,
                gaussian_noise(load_image(workdir / "ref.png"), sigma, seed=i),
            )
            rows.append(["ref.png", name, str(100 - sigma), f"n{sigma}", "traditional"])
        manifest = workdir / "manifest.csv"
        with manifest.open("w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        report_path = tmp_path / "report.json"
        code, out, _ = run(
            capsys, "benchmark", "--manifest", manifest,
            "--metrics", "psnr,ssim", "--group-by", "subtype",
            "--format", "json", "--out", report_path,
        )
        assert code == 0
        payload = json.loads(out)
        cells = {(c["metric"], c["group"]): c for c in payload["cells"]}
        assert ("psnr", "traditional") in cells
        assert ("ssim", "traditional") in cells
        assert cells[("psnr", "traditional")]["srcc"] == 1.0
        assert json.loads(report_path.read_text()) == payload


class TestEloSimCommand:
    def test_curve_csv_and_final_value(self, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        code, stdout, _ = run(
            capsys, "elo-sim", "--populations", 20, "--k", 16, "--m", 400,
            "--strategy", "similar", "--judgements", 2000,
            "--checkpoint-every", 500, "--seed", 7, "--out", out,
        )
        assert code == 0
        assert "final_srcc=" in stdout
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "judgements,srcc"
        assert len(lines) == 5

    def test_sweep_writes_index(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code, stdout, _ = run(
            capsys, "elo-sim", "--populations", 10, "--k", "8,16",
            "--judgements", 500, "--checkpoint-every", 250,
            "--seed", 3, "--out", out, "--format", "json",
        )
        assert code == 0
        payload = json.loads(stdout)
        assert set(payload["final_srcc"]) == {"8", "16"}
        index = json.loads((tmp_path / "sweep-index.json").read_text())
        for path in index["curves"].values():
            assert (tmp_path / path).exists() or json.dumps(path)

    def test_seed_required(self):
        with pytest.raises(SystemExit) as exit_info:
            main(["elo-sim", "--populations", "10", "--judgements", "100",
                  "--out", "x.csv"])
        assert exit_info.value.code == 2

    def test_headline_invocation_converges(self, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        code, stdout, _ = run(
            capsys, "elo-sim", "--populations", 150, "--k", 16, "--m", 400,
            "--strategy", "similar", "--judgements", 200000, "--seed", 7,
            "--out", out,
        )
        assert code == 0
        final = float(stdout.strip().rsplit("=", 1)[1])
        assert final >= 0.9
        last = out.read_text().strip().splitlines()[-1]
        assert float(last.split(",")[1]) >= 0.9


class TestCounterexampleCommand:
    def test_outputs_image_and_trajectory(self, workdir, capsys, tmp_path):
        out_img = tmp_path / "cx.png"
        out_csv = tmp_path / "cx.csv"
        code, stdout, _ = run(
            capsys, "counterexample", "--metric", "ssim",
            "--direction", "maximize", "--steps", 25, "--alpha", 1.0,
            "--ref", workdir / "ref.png", "--init", workdir / "dist.png",
            "--out", out_img, "--trajectory", out_csv, "--format", "json",
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["final_objective"] >= payload["initial_objective"]
        assert out_img.exists()
        header = out_csv.read_text().splitlines()[0]
        assert header == "step,objective,residual"


class TestSwdnCommand:
    def test_seeded_score(self, workdir, capsys):
        code, out, _ = run(
            capsys, "swdn", "--ref", workdir / "ref.png",
            "--dist", workdir / "dist.png", "--seed", 7,
        )
        assert code == 0
        assert float(out.strip()) > 0.0

    def test_weights_and_seed_mutually_exclusive(self, workdir):
        with pytest.raises(SystemExit) as exit_info:
            main(["swdn", "--ref", str(workdir / "ref.png"),
                  "--dist", str(workdir / "dist.png"),
                  "--seed", "7", "--weights", "somewhere"])
        assert exit_info.value.code == 2

    def test_weights_bundle_round_trip(self, workdir, capsys, tmp_path):
        from pqbench.features import default_weight_bundle

        default_weight_bundle(seed=7).save(tmp_path / "w")
        code_seeded, out_seeded, _ = run(
            capsys, "swdn", "--ref", workdir / "ref.png",
            "--dist", workdir / "dist.png", "--seed", 7,
        )
        code_loaded, out_loaded, _ = run(
            capsys, "swdn", "--ref", workdir / "ref.png",
            "--dist", workdir / "dist.png", "--weights", tmp_path / "w",
        )
        assert code_seeded == code_loaded == 0
        assert out_seeded == out_loaded
