import json
import math
import subprocess
import sys

import numpy as np
import pytest

from surepsf.cli import EXIT_IO, EXIT_NUMERIC, EXIT_USAGE, build_parser, main, resolve
from surepsf.imageio import read_image, write_image
from surepsf.psf import GaussianPSF
from surepsf.spectral import forward_dft, inverse_dft
from surepsf.testimages import dead_leaves

TRUTH = GaussianPSF(2.0, 1.0, math.radians(30))


def _blurred(shape=(128, 128), snr=100.0, seed=0):
    img = dead_leaves(shape, seed=3)
    bl = inverse_dft(forward_dft(img) * TRUTH.spectrum(shape))
    sigma = float(bl.mean()) / snr
    b = bl + sigma * np.random.default_rng(seed).standard_normal(shape)
    return img, np.clip(b, 0, 1), sigma


@pytest.fixture(scope="module")
def blurred_pgm(tmp_path_factory):
    d = tmp_path_factory.mktemp("img")
    img, b, sigma = _blurred()
    write_image(d / "b.pgm", b)
    return d / "b.pgm", sigma


def _json(path):
    return json.loads(path.read_text())


# --------------------------------------------------------------------- help


def test_module_help_exits_zero():
    out = subprocess.run([sys.executable, "-m", "surepsf", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("estimate", "simulate", "lambda-check", "tile"):
        assert cmd in out.stdout


@pytest.mark.parametrize("cmd", ["estimate", "simulate", "lambda-check", "tile"])
def test_subcommand_help_lists_every_flag(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    sub = next(a for a in build_parser()._actions if a.dest == "command").choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.option_strings and action.dest != "help":
            assert action.help


def test_bad_usage_exit_codes(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["estimate", "--bogus"]) == EXIT_USAGE
    assert main(["estimate", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["estimate", "--input", str(tmp_path / "missing.pgm"), "--sigma", "0.1"]) == EXIT_IO
    assert "required" in capsys.readouterr().err


# ------------------------------------------------------------------- config


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lambda0": 0.5, "max-iters": 7, "family": "laplacian"}))
    r = resolve(["estimate", "--config", str(cfg), "--max-iters", "9"])
    assert r["lambda0"] == 0.5 and r["max_iters"] == 9 and r["family"] == "laplacian"
    assert r["reg_order"] == 1.0


def test_config_rejects_unknown_and_bad_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert main(["estimate", "--config", str(bad)]) == EXIT_USAGE
    bad.write_text("{")
    assert main(["estimate", "--config", str(bad)]) == EXIT_USAGE
    assert main(["estimate", "--config", str(tmp_path / "none.json")]) == EXIT_IO


# ----------------------------------------------------------------- estimate


def test_estimate_writes_params_and_trace(blurred_pgm, tmp_path):
    path, sigma = blurred_pgm
    argv = ["estimate", "--input", str(path), "--sigma", repr(sigma), "--out", str(tmp_path),
            "--max-iters", "300", "--deconvolved", "u.pgm"]
    assert main(argv) == 0
    res = _json(tmp_path / "params.json")
    assert res["status"] == "CONVERGED"
    assert res["model"]["omega_x"] == pytest.approx(2.0, abs=0.3)
    assert res["model"]["theta_deg"] == pytest.approx(30.0, abs=5.0)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "# schema=1" and len(lines) == res["iterations"] + 2
    assert read_image(tmp_path / "u.pgm").shape == (128, 128)


def test_estimate_rgb_with_snr(tmp_path):
    _, b, sigma = _blurred((64, 64))
    write_image(tmp_path / "rgb.ppm", np.stack([b, b, b], axis=-1))
    argv = ["estimate", "--input", str(tmp_path / "rgb.ppm"), "--snr", "100", "--out", str(tmp_path),
            "--max-iters", "20", "--deconvolved", "u.ppm"]
    assert main(argv) == 0
    assert read_image(tmp_path / "u.ppm").shape == (64, 64, 3)
    assert _json(tmp_path / "params.json")["sigma"] == pytest.approx(b.mean() / 100, rel=1e-3)


def test_diverged_is_success(blurred_pgm, tmp_path):
    path, sigma = blurred_pgm
    argv = ["estimate", "--input", str(path), "--sigma", repr(sigma), "--out", str(tmp_path),
            "--init", "omega_x=49.9,omega_y=1,theta_deg=0", "--p", "3"]
    assert main(argv) == 0
    assert _json(tmp_path / "params.json")["status"] in ("DIVERGED", "MAX_ITERS")


def test_numeric_failure_exit_code(tmp_path):
    write_image(tmp_path / "flat.pgm", np.zeros((32, 32)))
    # an all-zero image has no data to fit: the lambda update degenerates
    argv = ["estimate", "--input", str(tmp_path / "flat.pgm"), "--sigma", "0.1", "--out", str(tmp_path)]
    assert main(argv) in (0, EXIT_NUMERIC)
    assert main(["estimate", "--input", str(tmp_path / "flat.pgm"), "--sigma", "-1"]) == EXIT_USAGE


# ------------------------------------------------------------- lambda-check


def test_lambda_check_reference_agrees(tmp_path):
    assert main(["lambda-check", "--out", str(tmp_path)]) == 0
    res = _json(tmp_path / "lambda_check.json")
    assert res["agree"] is True and res["fixed_point_converged"]
    lines = (tmp_path / "lambda_grid.csv").read_text().splitlines()
    assert len(lines) == 64 + 2


def test_lambda_check_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["lambda-check", "--seed", "3", "--grid-points", "16", "--out", str(tmp_path / d)]) == 0
    for name in ("lambda_grid.csv", "lambda_check.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_lambda_check_degenerate_grid_warns(tmp_path, caplog):
    assert main(["lambda-check", "--grid-points", "1", "--out", str(tmp_path)]) == 0
    assert "degenerate" in caplog.text
    assert _json(tmp_path / "lambda_check.json")["agree"] is False


def test_lambda_check_with_input(blurred_pgm, tmp_path):
    path, sigma = blurred_pgm
    assert main(["lambda-check", "--input", str(path), "--out", str(tmp_path)]) == EXIT_USAGE
    argv = ["lambda-check", "--input", str(path), "--sigma", repr(sigma), "--out", str(tmp_path),
            "--psf", "omega_x=2,omega_y=1,theta_deg=30"]
    assert main(argv) == 0
    assert _json(tmp_path / "lambda_check.json")["agree"] is True


# ----------------------------------------------------------------- simulate


def test_simulate_and_manifest_rerun(tmp_path):
    argv = ["simulate", "--trials", "2", "--p", "0.25,0.5", "--max-iters", "20", "--no-grid-lambda",
            "--snr", "60", "--out", str(tmp_path / "a")]
    assert main(argv) == 0
    hist = (tmp_path / "a" / "histogram.csv").read_text().splitlines()
    assert hist[0] == "# schema=1" and hist[1].startswith("p,trials,1-25")
    assert len(hist) == 4
    assert main(["simulate", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    for name in ("histogram.csv", "scatter.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_compare_ideal(tmp_path):
    argv = ["simulate", "--family", "laplacian", "--compare-ideal", "--trials", "1", "--max-iters", "20",
            "--out", str(tmp_path)]
    assert main(argv) == 0
    assert (tmp_path / "comparison.csv").exists()
    assert main(["simulate", "--compare-ideal", "--trials", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--trials", "0", "--out", str(tmp_path)]) == EXIT_USAGE


# --------------------------------------------------------------------- tile


def test_tile_rgb(tmp_path):
    img, b, sigma = _blurred((128, 128))
    write_image(tmp_path / "rgb.ppm", np.stack([b, b, b], axis=-1))
    argv = ["tile", "--input", str(tmp_path / "rgb.ppm"), "--sigma", repr(sigma), "--patch", "64",
            "--max-iters", "200", "--out", str(tmp_path)]
    assert main(argv) == 0
    stats = _json(tmp_path / "patch_stats.json")
    assert stats["patches"] == 9 and stats["converged"] >= 1
    assert stats["std"]["omega_x"] < 0.3
    out = read_image(tmp_path / "deconvolved.ppm")
    assert out.shape == (128, 128, 3)
    assert (tmp_path / "patch_stats.csv").read_text().startswith("# schema=1\nparameter,mean,std,converged")


def test_tile_single_patch_gray(tmp_path, caplog):
    _, b, sigma = _blurred((64, 64))
    write_image(tmp_path / "g.pgm", b)
    argv = ["tile", "--input", str(tmp_path / "g.pgm"), "--sigma", repr(sigma), "--max-iters", "300",
            "--out", str(tmp_path)]
    assert main(argv) == 0
    assert "single patch" in caplog.text
    assert read_image(tmp_path / "deconvolved.pgm").shape == (64, 64)
