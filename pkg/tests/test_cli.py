import csv
import math
import subprocess
import sys

import numpy as np
import pytest

import foelm.optimizer as optimizer
from foelm.cli import main
from foelm.image import Image, load_image, read_pgm, save_image, synthetic_image, write_pgm
from foelm.model import serialize_model, FoeModel


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_kv(text):
    values = {}
    for line in text.splitlines():
        key, _, value = line.partition(" ")
        if value:
            values[key] = value
    return values


@pytest.fixture
def scene(tmp_path):
    path = tmp_path / "clean.pgm"
    save_image(path, synthetic_image(40, 32, seed=3))
    return path


@pytest.fixture
def empty_model(tmp_path):
    path = tmp_path / "empty.foe"
    path.write_text(serialize_model(FoeModel(1, [], np.zeros((0, 1, 1)))))
    return path


class TestAddNoise:
    def test_deterministic(self, capsys, scene, tmp_path):
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        assert run(capsys, "add-noise", scene, a, "--sigma", 20, "--seed", 1)[0] == 0
        assert run(capsys, "add-noise", scene, b, "--sigma", 20, "--seed", 1)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        c = tmp_path / "c.pgm"
        run(capsys, "add-noise", scene, c, "--sigma", 20, "--seed", 2)
        assert a.read_bytes() != c.read_bytes()

    def test_tiny_sigma_is_identity(self, capsys, scene, tmp_path):
        out = tmp_path / "out.pgm"
        assert run(capsys, "add-noise", scene, out, "--sigma", 1e-4)[0] == 0
        assert out.read_bytes() == scene.read_bytes()

    def test_statistical_sd(self, capsys, tmp_path):
        src, out = tmp_path / "flat.pgm", tmp_path / "noisy.npy"
        save_image(src, Image(np.full((256, 256), 128.0)))
        run(capsys, "add-noise", src, out, "--sigma", 20, "--seed", 9)
        diff = load_image(out).pixels - 128.0
        assert 19.0 <= diff.std(ddof=1) <= 21.0

    def test_out_of_range_warns_and_clamps(self, capsys, caplog, tmp_path):
        src, out = tmp_path / "black.pgm", tmp_path / "out.pgm"
        save_image(src, Image(np.zeros((16, 16))))
        code, _, _ = run(capsys, "add-noise", src, out, "--sigma", 20)
        assert code == 0 and "clamped" in caplog.text
        assert read_pgm(out.read_bytes()).pixels.min() == 0.0

    def test_explicit_clamp_is_silent(self, capsys, caplog, tmp_path):
        src, out = tmp_path / "black.pgm", tmp_path / "out.pgm"
        save_image(src, Image(np.zeros((16, 16))))
        code, _, _ = run(capsys, "add-noise", src, out, "--sigma", 20, "--clamp")
        assert code == 0 and caplog.text == ""

    def test_warning_reaches_stderr(self, scene, tmp_path):
        src = tmp_path / "black.pgm"
        save_image(src, Image(np.zeros((16, 16))))
        proc = subprocess.run([sys.executable, "-m", "foelm", "add-noise", str(src), str(tmp_path / "o.pgm"), "--sigma", "20"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "clamped" in proc.stderr

    def test_missing_input(self, capsys, tmp_path):
        code, _, err = run(capsys, "add-noise", tmp_path / "nope.pgm", tmp_path / "o.pgm", "--sigma", 1)
        assert code == 1 and "error" in err


class TestDenoise:
    def test_reports_and_descends(self, capsys, scene, tmp_path):
        noisy, out, trace = tmp_path / "noisy.pgm", tmp_path / "out.pgm", tmp_path / "trace.csv"
        run(capsys, "add-noise", scene, noisy, "--sigma", 20, "--seed", 1, "--clamp")
        code, stdout, _ = run(capsys, "denoise", noisy, out, "--builtin", "diff2x2", "--sigma", 20, "--report", trace)
        assert code == 0
        kv = parse_kv(stdout)
        assert float(kv["final_objective"]) < float(kv["initial_objective"])
        assert float(kv["wall_seconds"]) > 0
        assert kv["termination"] in {"function_tol", "gradient_tol", "max_iter"}
        rows = list(csv.DictReader(trace.open()))
        assert len(rows) == int(kv["iterations"])
        assert read_pgm(out.read_bytes()).shape == (32, 40)

    def test_round_reports_gap(self, capsys, scene, tmp_path):
        noisy, out = tmp_path / "noisy.pgm", tmp_path / "out.pgm"
        run(capsys, "add-noise", scene, noisy, "--sigma", 20, "--clamp")
        code, stdout, _ = run(capsys, "denoise", noisy, out, "--builtin", "diff2x2", "--sigma", 20, "--round")
        kv = parse_kv(stdout)
        assert code == 0
        gap = float(kv["rounding_gap"])
        rounded, final = float(kv["rounded_objective"]), float(kv["final_objective"])
        assert gap == pytest.approx((rounded - final) / final, rel=1e-9)
        assert gap >= -1e-12

    def test_energy_of_output_matches_report(self, capsys, scene, tmp_path):
        noisy, out = tmp_path / "noisy.npy", tmp_path / "out.npy"
        run(capsys, "add-noise", scene, noisy, "--sigma", 20, "--seed", 4)
        _, stdout, _ = run(capsys, "denoise", noisy, out, "--builtin", "diff2x2", "--sigma", 20)
        final = float(parse_kv(stdout)["final_objective"])
        _, stdout, _ = run(capsys, "energy", noisy, out, "--builtin", "diff2x2", "--sigma", 20)
        assert float(parse_kv(stdout)["total"]) == pytest.approx(final, rel=1e-11)

    def test_empty_model_returns_input(self, capsys, scene, tmp_path, empty_model):
        out = tmp_path / "out.pgm"
        code, stdout, _ = run(capsys, "denoise", scene, out, "--model", empty_model, "--sigma", 20)
        assert code == 0
        assert out.read_bytes() == scene.read_bytes()
        assert float(parse_kv(stdout)["final_objective"]) == 0.0

    def test_model_larger_than_image(self, capsys, tmp_path):
        src = tmp_path / "tiny.pgm"
        save_image(src, Image(np.zeros((2, 2))))
        code, _, err = run(capsys, "denoise", src, tmp_path / "o.pgm", "--model", "random:3x2", "--sigma", 20)
        assert code == 1 and "patch" in err

    def test_bad_model_file(self, capsys, scene, tmp_path):
        bad = tmp_path / "bad.foe"
        bad.write_text("FOE\n2 1\n-1\n1 1 1 1\n")
        code, _, err = run(capsys, "denoise", scene, tmp_path / "o.pgm", "--model", bad, "--sigma", 20)
        assert code == 1 and "line 3" in err

    def test_model_source_required(self, scene, tmp_path):
        with pytest.raises(SystemExit):
            main(["denoise", str(scene), str(tmp_path / "o.pgm"), "--sigma", "20"])

    def test_sigma_must_be_positive(self, scene, tmp_path):
        with pytest.raises(SystemExit):
            main(["denoise", str(scene), str(tmp_path / "o.pgm"), "--builtin", "diff2x2", "--sigma", "0"])


class TestEnergy:
    def test_identical_empty_model(self, capsys, scene, empty_model):
        code, stdout, _ = run(capsys, "energy", scene, scene, "--model", empty_model, "--sigma", 5)
        assert code == 0 and parse_kv(stdout)["total"] == "0"

    @pytest.mark.parametrize(
        "model_text, candidate, expected",
        [
            ("FOE\n2 1\n1\n1 -1 -1 1\n", [1, 2, 3, 4], 15.0),
            ("FOE\n2 1\n1\n1 0 0 0\n", [2, 0, 0, 0], 3.09861228866811),
        ],
    )
    def test_hand_instances_via_files(self, capsys, tmp_path, model_text, candidate, expected):
        model, noisy, cand = tmp_path / "m.foe", tmp_path / "u.pgm", tmp_path / "x.pgm"
        model.write_text(model_text)
        noisy.write_bytes(write_pgm(Image(np.zeros((2, 2)))))
        cand.write_bytes(write_pgm(Image.from_data(2, 2, candidate)))
        code, stdout, _ = run(capsys, "energy", noisy, cand, "--model", model, "--sigma", 1)
        assert code == 0
        assert float(parse_kv(stdout)["total"]) == pytest.approx(expected, rel=1e-11)

    def test_dimension_mismatch(self, capsys, tmp_path):
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        save_image(a, Image(np.zeros((3, 3))))
        save_image(b, Image(np.zeros((3, 4))))
        code, _, err = run(capsys, "energy", a, b, "--builtin", "diff2x2", "--sigma", 1)
        assert code == 1 and "shape" in err


class TestPsnr:
    def test_identical(self, capsys, scene):
        assert run(capsys, "psnr", scene, scene)[1] == "psnr inf\n"

    def test_value_reparseable(self, capsys, tmp_path):
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        save_image(a, Image([[0.0, 0.0]]))
        save_image(b, Image([[10.0, 20.0]]))
        _, stdout, _ = run(capsys, "psnr", a, b)
        assert float(parse_kv(stdout)["psnr"]) == pytest.approx(24.15140352195873, rel=1e-11)


class TestBenchmark:
    def test_rows_and_pixels(self, capsys, scene, tmp_path):
        out = tmp_path / "bench.csv"
        code, stdout, _ = run(capsys, "benchmark", scene, "--builtin", "diff2x2", "--sigma", 20,
                              "--scales", "0.5,1", "--csv", out)
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert [int(r["pixels"]) for r in rows] == [20 * 16, 40 * 32]
        assert list(rows[0]) == ["pixels", "seconds", "final_objective", "iterations"]
        kv = parse_kv(stdout)
        assert math.isfinite(float(kv["slope_seconds_per_pixel"]))
        assert float(kv["per_pixel_time_ratio"]) >= 1.0


class TestCheckGrad:
    def test_builtin_passes(self, capsys):
        code, stdout, _ = run(capsys, "check-grad", "--builtin", "diff2x2", "--size", "8x8", "--trials", 20)
        assert code == 0
        assert float(parse_kv(stdout)["worst_relative_error"]) <= 1e-5

    def test_empty_model_exact(self, capsys, empty_model):
        code, stdout, _ = run(capsys, "check-grad", "--model", empty_model, "--trials", 5)
        assert code == 0
        assert float(parse_kv(stdout)["worst_relative_error"]) <= 1e-9

    @pytest.mark.parametrize("dims", ["1x2", "3x8", "5x24"])
    def test_random_models(self, capsys, dims):
        code, stdout, _ = run(capsys, "check-grad", "--random", dims, "--trials", 5, "--seed", 2)
        assert code == 0
        assert float(parse_kv(stdout)["worst_relative_error"]) <= 1e-5

    def test_broken_gradient_fails(self, capsys, monkeypatch):
        real = optimizer.gradient
        monkeypatch.setattr(optimizer, "gradient", lambda problem, x: 1.01 * real(problem, x))
        code, stdout, _ = run(capsys, "check-grad", "--builtin", "diff2x2", "--trials", 2)
        assert code == 1 and "FAIL" in stdout


def test_deterministic_stdout(capsys, scene, tmp_path):
    argv = ["denoise", scene, tmp_path / "o.pgm", "--builtin", "diff2x2", "--sigma", 20, "--max-iters", 5]
    first = run(capsys, *argv)[1].splitlines()
    second = run(capsys, *argv)[1].splitlines()
    strip = lambda lines: [l for l in lines if not l.startswith("wall_seconds")]
    assert strip(first) == strip(second)


def test_threads_flag(capsys, scene, tmp_path):
    code, _, _ = run(capsys, "--threads", 1, "psnr", scene, scene)
    assert code == 0


def test_module_entry_point(scene):
    proc = subprocess.run([sys.executable, "-m", "foelm", "psnr", str(scene), str(scene)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "psnr inf\n"
