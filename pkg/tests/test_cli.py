import json

import numpy as np
import pytest

from pocketforge.__main__ import main
from pocketforge.distances import chamfer
from pocketforge.model import HyperPocket
from pocketforge.utils import read_cloud, write_cloud

pytestmark = pytest.mark.usefixtures("root_logger_guard")

TINY_TRAIN = {
    "epochs": 1,
    "batch_size": 2,
    "points_per_cloud": 32,
    "val_points": 32,
    "noise_ramp_epochs": 1,
    "model": {
        "latent_size": 4,
        "encoder_widths": [8, 8],
        "decoder_widths": [8],
        "target_layers": [3, 4, 4, 3],
    },
}


@pytest.fixture
def checkpoint(tiny_model, tmp_path):
    return str(tiny_model.save(tmp_path / "model.ckpt"))


@pytest.fixture
def test_part(corpus, tmp_path):
    part = corpus.partitions("test")[0]
    existing = write_cloud(tmp_path / "existing.xyz", part.existing)
    missing = write_cloud(tmp_path / "missing.xyz", part.missing)
    return str(existing), str(missing)


def test_gen_data(tmp_path, make_corpus_config):
    config = tmp_path / "corpus.json"
    config.write_text(make_corpus_config().model_dump_json())
    out = tmp_path / "corpus"
    assert main(["gen-data", "--config", str(config), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["samples"]) == 9


def test_config_seed_survives_without_flag(tmp_path, make_corpus_config):
    config = tmp_path / "corpus.json"
    config.write_text(make_corpus_config(seed=5).model_dump_json())
    out = tmp_path / "corpus"
    assert main(["gen-data", "--config", str(config), "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5
    flagged = tmp_path / "flagged"
    args = ["--seed", "7", "gen-data", "--config", str(config)]
    assert main([*args, "--out", str(flagged)]) == 0
    assert json.loads((flagged / "manifest.json").read_text())["seed"] == 7


def test_usage_errors_exit_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--threads", "0", "gen-data", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_runtime_errors_exit_one(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text("{")
    out = str(tmp_path / "corpus")
    assert main(["gen-data", "--config", str(config), "--out", out]) == 1
    assert main(["eval-rec", "--model", "absent", "--data", out]) == 1


class TestTrainAndComplete:
    @pytest.fixture
    def train_config(self, tmp_path):
        path = tmp_path / "train.json"
        path.write_text(json.dumps(TINY_TRAIN))
        return str(path)

    def test_zero_epochs_writes_initial_model(
        self, train_config, corpus_dir, tmp_path
    ):
        out = tmp_path / "run"
        code = main(
            [
                "train",
                "--config",
                train_config,
                "--data",
                str(corpus_dir),
                "--out",
                str(out),
                "--epochs",
                "0",
            ]
        )
        assert code == 0
        assert (out / "best.ckpt").exists()

    def test_config_seed_and_threads_reach_training(
        self, corpus_dir, tmp_path
    ):
        path = tmp_path / "train.json"
        path.write_text(json.dumps(dict(TINY_TRAIN, seed=3, threads=2)))
        out = tmp_path / "run"
        args = ["--config", str(path), "--data", str(corpus_dir)]
        assert main(["train", *args, "--out", str(out), "--epochs", "0"]) == 0
        _, _, meta = HyperPocket.load(out / "best.ckpt")
        assert meta["train_config"]["seed"] == 3
        assert meta["train_config"]["threads"] == 2

    def test_train_then_complete(
        self, train_config, corpus_dir, test_part, tmp_path
    ):
        run = tmp_path / "run"
        args = ["--data", str(corpus_dir), "--out", str(run)]
        assert main(["train", "--config", train_config, *args]) == 0
        out = tmp_path / "completions"
        code = main(
            [
                "complete",
                "--model",
                str(run / "best.ckpt"),
                "--input",
                test_part[0],
                "--out",
                str(out),
                "--k",
                "3",
                "--sigma",
                "1e-12",
                "--n-points",
                "40",
            ]
        )
        assert code == 0
        clouds = [
            read_cloud(out / f"completion_{i:03d}.xyz") for i in range(3)
        ]
        assert all(len(c) == 40 for c in clouds)
        assert chamfer(clouds[0], clouds[1]) < 1e-6
        assert chamfer(clouds[0], clouds[2]) < 1e-6
        assert (out / "input.xyz").exists()


def test_dist_prints_value(tmp_path, capsys):
    a = write_cloud(tmp_path / "a.xyz", [[0.0, 0.0, 0.0]])
    b = write_cloud(tmp_path / "b.xyz", [[1.0, 0.0, 0.0]])
    for metric in ("cd", "cd-brute"):
        assert main(["dist", str(a), str(b), "--metric", metric]) == 0
        assert capsys.readouterr().out.strip() == "2.0"
    assert main(["dist", str(a), str(b), "--metric", "uhd"]) == 0
    assert capsys.readouterr().out.strip() == "1.0"


class TestGradcheck:
    def test_tiny_passes(self, capsys):
        assert main(["gradcheck", "--scale", "tiny"]) == 0
        assert "max relative error" in capsys.readouterr().out

    def test_injected_fault_fails(self):
        assert main(["gradcheck", "--inject-fault"]) == 1


class TestModelCommands:
    def test_eval_gen(self, checkpoint, corpus_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main(
            [
                "eval-gen",
                "--model",
                checkpoint,
                "--data",
                str(corpus_dir),
                "--out",
                str(out),
                "--k",
                "2",
                "--n-points",
                "48",
                "--cache",
                str(tmp_path / "cache.db"),
            ]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["cov_cd"] <= 1.0
        assert (out / "per_element.csv").exists()
        assert "JSD" in capsys.readouterr().out

    def test_eval_rec(self, checkpoint, corpus_dir, tmp_path, capsys):
        code = main(
            [
                "eval-rec",
                "--model",
                checkpoint,
                "--data",
                str(corpus_dir),
                "--n-points",
                "48",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        assert capsys.readouterr().out.startswith("CD (x10^4):")
        assert (tmp_path / "eval_rec_val.json").exists()

    def test_export_reps(self, checkpoint, corpus_dir, tmp_path):
        out = tmp_path / "reps"
        code = main(
            [
                "export-reps",
                "--model",
                checkpoint,
                "--data",
                str(corpus_dir),
                "--out",
                str(out),
                "--views",
                "1",
                "--bins",
                "5",
            ]
        )
        assert code == 0
        with np.load(out / "representations.npz") as reps:
            assert len(reps.files) > 0
        assert (out / "distance_summary.json").exists()

    def test_stitch(self, checkpoint, test_part, tmp_path):
        existing, missing = test_part
        code = main(
            [
                "stitch",
                "--model",
                checkpoint,
                "--existing",
                existing,
                "--missing",
                missing,
                "--out",
                str(tmp_path / "stitched"),
                "--n-points",
                "30",
                "--ply",
            ]
        )
        assert code == 0
        assert len(read_cloud(tmp_path / "stitched" / "stitched.xyz")) == 30
        assert (tmp_path / "stitched" / "stitched.ply").exists()

    def test_adapt_demo_scene(self, checkpoint, tmp_path):
        out = tmp_path / "adapt"
        code = main(
            [
                "adapt",
                "--model",
                checkpoint,
                "--out",
                str(out),
                "--steps",
                "2",
                "--restarts",
                "2",
                "--n-points",
                "64",
            ]
        )
        assert code == 0
        lines = (out / "objective.csv").read_text().splitlines()
        assert lines[0] == "step,objective,consistency,floor"
        assert len(lines) == 4
        assert len(read_cloud(out / "adapted.xyz")) == 64
