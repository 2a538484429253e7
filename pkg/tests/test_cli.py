import json

import numpy as np
import pytest

from lrspeckle.cli import run
from lrspeckle.imageio import read_image
from lrspeckle.metrics import read_csv


def error_line(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: ")
    return lines[0]


def test_usage_errors_exit_2(capsys):
    assert run(["frobnicate"]) == 2
    assert error_line(capsys).startswith("error: UsageError:")
    assert run(["register", "--out", "x", "--bogus"]) == 2
    error_line(capsys)
    assert run([]) == 2


def test_missing_manifest_exits_1(tmp_path, capsys):
    code = run(["register", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert error_line(capsys).startswith("error: ManifestError: manifest not found")


def test_bad_config_field_exits_1(tmp_path, capsys):
    code = run(["synth", "--out", str(tmp_path), "--set", "solver.lamda=2"])
    assert code == 1
    assert error_line(capsys) == "error: ConfigError: solver.lamda: unknown field"


def test_help_exits_0(capsys):
    assert run(["--help"]) == 0
    assert "pipeline" in capsys.readouterr().out


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    argv = ["pipeline", "--synth", "--out", str(out), "--size", "64", "--frames", "4",
            "--max-iters", "20"]
    assert run(argv) == 0
    return out, argv


def test_pipeline_writes_all_artifacts(small_run):
    out, _ = small_run
    for rel in [
        "data/manifest.json", "data/truth.pgm", "data/frame_03.pgm", "data/transforms_true.json",
        "data/sigma_true.pgm", "data/sigma_true.json",
        "register/transforms.json", "register/registered.npz", "register/registered_00.pgm",
        "noise/sigma.npz", "noise/sigma_00.pgm", "noise/sigma_00.json",
        "denoise/denoised.pgm", "denoise/L_00.pgm", "denoise/N_00.pgm", "denoise/N_00.json",
        "denoise/solve_report.json", "baselines/average.pgm", "baselines/single.pgm",
        "evaluate/metrics.csv",
    ]:
        assert (out / rel).is_file(), rel
    for stage in ("data", "register", "noise", "denoise", "evaluate"):
        prov = json.loads((out / stage / "provenance.json").read_text())
        assert prov["tool"] == "lrspeckle" and prov["config"]["frames"] == 4
    prov = json.loads((out / "register" / "provenance.json").read_text())
    assert "../data/manifest.json" in prov["inputs"]
    assert all(len(h) == 64 for h in prov["inputs"].values())
    report = json.loads((out / "denoise" / "solve_report.json").read_text())
    assert report["iterations"] == 20 and "wall_time" not in report
    rows = read_csv(out / "evaluate" / "metrics.csv")
    assert {name for name, _ in rows} == {"denoised", "average", "single"}
    assert {r.region for _, r in rows} == {"entire", "valid", "layers", "lesions"}
    assert len(json.loads((out / "register" / "transforms.json").read_text())["transforms"]) == 4


def test_sigma_sidecar_decodes(small_run):
    out, _ = small_run
    with np.load(out / "noise" / "sigma.npz") as z:
        sigma = z["data"][:, 0].reshape(int(z["rows"]), int(z["cols"]), order="F")
    side = json.loads((out / "noise" / "sigma_00.json").read_text())
    px = read_image(out / "noise" / side["image"]).pixels.astype(float)
    decoded = side["offset"] + side["scale"] * px
    assert np.abs(decoded - sigma).max() <= side["scale"]


def test_pipeline_is_byte_deterministic(small_run, tmp_path):
    out, argv = small_run
    argv = list(argv)
    argv[argv.index("--out") + 1] = str(tmp_path)
    assert run(argv) == 0
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "timing.json":
            twin = tmp_path / path.relative_to(out)
            assert path.read_bytes() == twin.read_bytes(), path.relative_to(out)


def test_stages_chain(tmp_path):
    d = tmp_path
    assert run(["synth", "--out", str(d / "data"), "--size", "48", "--frames", "3",
                "--format", "png"]) == 0
    assert (d / "data" / "frame_02.png").is_file()
    assert run(["register", "--manifest", str(d / "data" / "manifest.json"),
                "--out", str(d / "reg"), "--frames", "3"]) == 0
    assert run(["estimate-noise", "--registered", str(d / "reg" / "registered.npz"),
                "--out", str(d / "noise")]) == 0
    assert run(["denoise", "--registered", str(d / "reg" / "registered.npz"),
                "--sigma", str(d / "noise" / "sigma.npz"), "--out", str(d / "den"),
                "--max-iters", "5", "--lam", "0.1"]) == 0
    assert run(["evaluate", "--image", str(d / "den" / "denoised.pgm"),
                "--manifest", str(d / "data" / "manifest.json"),
                "--out", str(d / "ev")]) == 0
    rows = read_csv(d / "ev" / "metrics.csv")
    assert rows[0][0] == "denoised" and rows[0][1].region == "entire"


def test_frames_flag_limits_stack(tmp_path):
    assert run(["synth", "--out", str(tmp_path / "d"), "--size", "40", "--frames", "6"]) == 0
    assert run(["register", "--manifest", str(tmp_path / "d" / "manifest.json"),
                "--out", str(tmp_path / "r"), "--frames", "3"]) == 0
    with np.load(tmp_path / "r" / "registered.npz") as z:
        assert z["data"].shape[1] == 3 and int(z["reference_index"]) == 1


def test_evaluate_without_reference_fails(tmp_path, capsys):
    assert run(["synth", "--out", str(tmp_path), "--size", "32", "--frames", "2"]) == 0
    code = run(["evaluate", "--image", str(tmp_path / "frame_00.pgm"), "--out", str(tmp_path)])
    assert code == 1
    assert "reference" in error_line(capsys)
