import numpy as np
import pytest

from tacnn.cli import main
from tacnn.formats import load_checkpoint, write_raster

SMALL = ["--set", "n_pos=60", "--set", "n_neg=60", "--set", "n_ba=8", "--set", "n_bb=8", "--set", "n_bc=8",
         "--set", "n_test_patches=12", "--set", "n_scenes=2", "--set", "n_mining_images=2", "--set", "epochs=1",
         "--set", "outer_iterations=2", "--set", "rbm_epochs=2", "--set", "rbm_hidden=8", "--quiet"]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path), *SMALL])


def test_usage_errors(capsys, tmp_path):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["train", "--out", str(tmp_path), "--set", "nope=1"]) == 2
    assert "unknown config key" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path), "--config", str(tmp_path / "missing.txt")]) == 2


def test_missing_inputs_are_runtime_errors(capsys, tmp_path):
    assert main(["spv-build", "--out", str(tmp_path)]) == 1
    assert "run 'gen-data' first" in capsys.readouterr().err
    assert main(["eval", "--out", str(tmp_path)]) == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    for cmd in ("gen-data", "spv-build", "rbm-train", "train", "eval"):
        assert run(out, cmd) == 0, cmd
    return out


def test_pipeline_outputs(pipeline):
    for name in ("config.txt", "spv.ckpt", "rbm.ckpt", "model.ckpt", "epochs.csv", "lambda.csv", "prob_table.tsv",
                 "detections.tsv", "curve.csv", "metrics.csv", "viewpoint_confusion.csv"):
        assert (pipeline / name).exists(), name
    ck = load_checkpoint(pipeline / "model.ckpt")
    assert ck.arrays["coeffs/lam"][0] == 1.0 and "model/top.W" in ck.arrays and "spv/z_mean" in ck.arrays
    metrics = dict(line.split(",") for line in (pipeline / "metrics.csv").read_text().splitlines()[1:])
    assert 0.0 <= float(metrics["lamr"]) <= 100.0 and metrics["n_images"] == "2"
    lam = (pipeline / "lambda.csv").read_text().splitlines()
    assert lam[0].startswith("step,objective,main,") and len(lam) == 4  # header, initial, two updates


def test_detect_and_curves(pipeline, tmp_path):
    img = np.random.default_rng(0).random((1, 64, 48))
    write_raster(tmp_path / "x.pgm", img)
    assert run(tmp_path, "detect", "--checkpoint", str(pipeline / "model.ckpt"), "--image", str(tmp_path / "x.pgm")) == 0
    rows = (tmp_path / "detect.tsv").read_text().splitlines()
    assert rows[0].startswith("image_id") and len(rows) >= 2
    write_raster(tmp_path / "tiny.pgm", img[:, :10, :10])
    assert run(tmp_path, "detect", "--checkpoint", str(pipeline / "model.ckpt"),
               "--image", str(tmp_path / "tiny.pgm")) == 1
    assert run(tmp_path, "curves", str(pipeline / "curve.csv")) == 0
    assert (tmp_path / "curves_summary.csv").read_text().count("\n") == 2


def test_zero_epoch_training(tmp_path):
    assert run(tmp_path, "gen-data") == 0
    assert main(["train", "--out", str(tmp_path), *SMALL, "--set", "epochs=0", "--set", "use_spv=false"]) == 0
    ck = load_checkpoint(tmp_path / "model.ckpt")
    assert np.all(ck.arrays["coeffs/lam"] == 1.0)
