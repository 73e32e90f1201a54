"""The command-line pipeline: synth, train, eval, retrieve, curves, checks."""

import numpy as np
import pytest

from mhcvse.cli import main
from mhcvse.config import TrainConfig, save_config
from mhcvse.data import load_dataset
from mhcvse.training import load_checkpoint

TINY_CFG = dict(embed_dim=8, feature_dim=5, heads=2, concepts=4, batch_size=4,
                epochs=2, patience=1, eta0=0.01, seed=11)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synthetic dataset plus a trained checkpoint shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    cfg_path = root / "tiny.cfg"
    save_config(TrainConfig(**TINY_CFG), cfg_path)
    assert main(["synth", "--out", str(data), "--pairs", "12",
                 "--feature-dim", "5", "--seed", "5"]) == 0
    assert main(["train", "--config", str(cfg_path),
                 "--train", str(data / "train.manifest.json"),
                 "--val", str(data / "val.manifest.json"),
                 "--out", str(run)]) == 0
    return data, run, cfg_path


class TestSynth:
    def test_writes_three_manifests_and_prints_them(self, tmp_path, capsys):
        out = tmp_path / "synthetic"
        assert main(["synth", "--out", str(out), "--pairs", "8",
                     "--seed", "3"]) == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert len(printed) == 3
        for split in ("train", "val", "test"):
            assert (out / f"{split}.manifest.json").exists()
            assert (out / f"{split}.features.rgft").exists()
            assert (out / f"{split}.captions.jsonl").exists()

    def test_impossible_geometry_exits_one(self, tmp_path, capsys):
        code = main(["synth", "--out", str(tmp_path / "x"), "--pairs", "50",
                     "--length", "2", "--vocab", "20",
                     "--separation", "4.0"])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_artifacts_exist(self, workspace):
        _, run, _ = workspace
        for name in ("checkpoint.mhcv", "checkpoint.mhcv.meta.json",
                     "train_log.csv", "concepts.csv", "adjacency.csv"):
            assert (run / name).exists(), name

    def test_train_log_has_one_row_per_epoch(self, workspace):
        _, run, _ = workspace
        lines = (run / "train_log.csv").read_text().strip().splitlines()
        assert lines[0].startswith("epoch,l_instance")
        assert len(lines) - 1 == TINY_CFG["epochs"]

    def test_checkpoint_holds_every_model_tensor(self, workspace):
        _, run, _ = workspace
        arrays = load_checkpoint(run / "checkpoint.mhcv")
        assert "encoder.image_proj" in arrays
        assert "consensus.adjacency" in arrays

    def test_missing_manifest_exits_two(self, tmp_path, capsys):
        code = main(["train", "--train", str(tmp_path / "none.json"),
                     "--val", str(tmp_path / "none.json"),
                     "--out", str(tmp_path)])
        assert code == 2
        err = capsys.readouterr().err
        assert "no such file" in err and "usage" in err


class TestEval:
    def test_report_has_six_recalls_and_a_mean(self, workspace, tmp_path, capsys):
        data, run, _ = workspace
        report = tmp_path / "eval_report.csv"
        assert main(["eval", "--checkpoint", str(run / "checkpoint.mhcv"),
                     "--manifest", str(data / "test.manifest.json"),
                     "--out", str(report)]) == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "direction,k,recall"
        assert len(lines) == 8
        assert lines[-1].startswith("mean,,")
        out = capsys.readouterr().out
        assert "image_to_text R@1" in out and "mR:" in out

    def test_level_flag_changes_the_embedding(self, workspace, tmp_path):
        data, run, _ = workspace
        a, b = tmp_path / "fused.csv", tmp_path / "inst.csv"
        main(["eval", "--checkpoint", str(run / "checkpoint.mhcv"),
              "--manifest", str(data / "val.manifest.json"), "--out", str(a)])
        main(["eval", "--checkpoint", str(run / "checkpoint.mhcv"),
              "--manifest", str(data / "val.manifest.json"), "--out", str(b),
              "--level", "instance"])
        assert a.exists() and b.exists()

    def test_missing_checkpoint_exits_two(self, workspace, tmp_path):
        data, _, _ = workspace
        assert main(["eval", "--checkpoint", str(tmp_path / "no.mhcv"),
                     "--manifest", str(data / "val.manifest.json")]) == 2


class TestRetrieve:
    def test_prints_k_caption_ids_with_scores(self, workspace, capsys):
        data, run, _ = workspace
        train_ds = load_dataset(data / "train.manifest.json")
        image_id = train_ds.image_ids[0]
        assert main(["retrieve", "--checkpoint", str(run / "checkpoint.mhcv"),
                     "--manifest", str(data / "train.manifest.json"),
                     "--image-id", str(image_id), "--k", "3"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        caption_ids = {c for c, _, _ in train_ds.captions}
        scores = []
        for line in lines:
            cid, score = line.split("\t")
            assert int(cid) in caption_ids
            scores.append(float(score))
        assert scores == sorted(scores, reverse=True)

    def test_unknown_image_id_exits_one(self, workspace, capsys):
        data, run, _ = workspace
        code = main(["retrieve", "--checkpoint", str(run / "checkpoint.mhcv"),
                     "--manifest", str(data / "train.manifest.json"),
                     "--image-id", "9999"])
        assert code == 1
        assert "not in split" in capsys.readouterr().err

    def test_k_below_one_exits_one(self, workspace):
        data, run, _ = workspace
        assert main(["retrieve", "--checkpoint", str(run / "checkpoint.mhcv"),
                     "--manifest", str(data / "train.manifest.json"),
                     "--image-id", "0", "--k", "0"]) == 1


class TestLrCurve:
    def test_midpoint_of_a_unit_schedule(self, tmp_path):
        out = tmp_path / "lr_curve.csv"
        assert main(["lr-curve", "--eta0", "1.0", "--eta-min", "0.0",
                     "--period", "100", "--steps", "60",
                     "--out", str(out)]) == 0
        rows = [line.split(",") for line in
                out.read_text().strip().splitlines()[1:]]
        assert len(rows) == 60
        assert float(rows[0][1]) == 1.0
        assert abs(float(rows[50][1]) - 0.5) < 1e-15

    def test_defaults_come_from_the_config_file(self, workspace, tmp_path):
        _, _, cfg_path = workspace
        out = tmp_path / "cfg_curve.csv"
        assert main(["lr-curve", "--config", str(cfg_path),
                     "--period", "10", "--steps", "1",
                     "--out", str(out)]) == 0
        first = out.read_text().strip().splitlines()[1]
        assert float(first.split(",")[1]) == TINY_CFG["eta0"]


class TestGradCheck:
    def test_fresh_model_passes_every_block(self, capsys):
        assert main(["grad-check", "--seed", "0"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) >= 10
        assert all("ok" in line for line in out)
        assert not any("FAIL" in line for line in out)


class TestUsageErrors:
    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["bogus"])
        assert exc.value.code == 2

    def test_no_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2


class TestDeterminism:
    def test_synth_twice_is_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--out", str(a), "--pairs", "8", "--seed", "21"])
        main(["synth", "--out", str(b), "--pairs", "8", "--seed", "21"])
        assert (a / "train.features.rgft").read_bytes() == \
            (b / "train.features.rgft").read_bytes()

    def test_env_seed_reaches_training(self, workspace, tmp_path, monkeypatch):
        data, _, cfg_path = workspace

        def run(out):
            return main(["train", "--config", str(cfg_path),
                         "--train", str(data / "train.manifest.json"),
                         "--val", str(data / "val.manifest.json"),
                         "--out", str(out)])

        monkeypatch.setenv("MHCVSE_SEED", "99")
        assert run(tmp_path / "r1") == 0
        assert run(tmp_path / "r2") == 0
        a = load_checkpoint(tmp_path / "r1" / "checkpoint.mhcv")
        b = load_checkpoint(tmp_path / "r2" / "checkpoint.mhcv")
        assert all(np.array_equal(a[n], b[n]) for n in a)
        monkeypatch.setenv("MHCVSE_SEED", "100")
        assert run(tmp_path / "r3") == 0
        c = load_checkpoint(tmp_path / "r3" / "checkpoint.mhcv")
        assert any(not np.array_equal(a[n], c[n]) for n in a)
