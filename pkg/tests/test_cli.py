import numpy as np
import pytest
import yaml

from src.cli import build_parser, main
from src.config import load_experiment_config
from src.file_handling import load_checkpoint, read_csv, read_csv_provenance, read_json
from src.hqcnn import build_hqcnn, load_hqcnn


def run(*argv):
    return main(["-q", *argv])


@pytest.fixture
def hqcnn_run(tmp_path, tiny_config_path):
    out = tmp_path / "hqcnn"
    assert run("train-hqcnn", "--config", tiny_config_path, "--out", str(out)) == 0
    return out


@pytest.fixture
def qgan_run(tmp_path, tiny_config_path):
    out = tmp_path / "qgan"
    assert run("train-qgan", "--config", tiny_config_path, "--out", str(out)) == 0
    return out


class TestParser:
    def test_overrides(self, tiny_config_path):
        args = build_parser().parse_args(["train-qgan", "--config", tiny_config_path, "--epochs", "3", "--seed", "9"])
        assert args.command == "train-qgan" and args.epochs == 3

    def test_unknown_strategy(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["augment", "--strategy", "quantum"])


class TestTrainHqcnn:
    def test_zero_epochs(self, tmp_path, tiny_config_path, capsys):
        out = tmp_path / "run"
        assert run("train-hqcnn", "--config", tiny_config_path, "--epochs", "0", "--out", str(out)) == 0
        assert "Files saved to:" in capsys.readouterr().out

        metrics = read_json(out / "metrics.json")
        assert metrics["epochs"] == 0
        assert set(metrics) >= {"config", "inputs", "report", "parameters"}
        assert len(metrics["report"]["per_class_accuracy"]) == 3
        assert metrics["inputs"]["train_counts"] == [4, 4, 4]

        curve = read_csv(out / "curve.csv")
        assert list(curve.columns) == ["epoch", "loss", "accuracy", "test_accuracy"]
        assert len(curve) == 0

        config = load_experiment_config(tiny_config_path)
        initial = build_hqcnn(config.hqcnn, np.random.default_rng(config.train.seed))
        np.testing.assert_array_equal(load_hqcnn(out / "checkpoint.json").theta, initial.theta)
        assert (out / "data_manifest.json").exists()

    def test_deterministic(self, tmp_path, tiny_config_path):
        for name in ("a", "b"):
            assert run("train-hqcnn", "--config", tiny_config_path, "--out", str(tmp_path / name)) == 0
        for file in ("metrics.json", "curve.csv", "checkpoint.json"):
            assert (tmp_path / "a" / file).read_bytes() == (tmp_path / "b" / file).read_bytes()

    def test_checkpoint_keeps_optimizer_and_provenance(self, hqcnn_run):
        metrics = read_json(hqcnn_run / "metrics.json")
        checkpoint = load_checkpoint(hqcnn_run / "checkpoint.json")
        # 12 images in batches of 4 for one epoch
        assert checkpoint["optimizer"].kind == "adam"
        assert checkpoint["optimizer"].step == 3
        assert checkpoint["optimizer"].m is not None
        provenance = checkpoint["extra"]["provenance"]
        assert provenance["config"] == metrics["config"]
        assert provenance["inputs"] == metrics["inputs"]
        assert len(provenance["inputs_hash"]) == 64

    def test_csv_carries_provenance(self, hqcnn_run):
        header = read_csv_provenance(hqcnn_run / "curve.csv")
        metrics = read_json(hqcnn_run / "metrics.json")
        assert header["inputs_hash"] == metrics["inputs_hash"]
        assert header["config"] == metrics["config"]
        assert len(read_csv(hqcnn_run / "curve.csv")) == 1
        manifest = read_json(hqcnn_run / "data_manifest.json")
        assert manifest["inputs_hash"] == metrics["inputs_hash"]

    def test_seed_flag(self, tmp_path, tiny_config_path):
        assert run("train-hqcnn", "--config", tiny_config_path, "--epochs", "0", "--seed", "5",
                   "--out", str(tmp_path)) == 0
        config = read_json(tmp_path / "metrics.json")["config"]
        assert config["train"]["seed"] == 5 and config["seeds"] == [5]


class TestTrainGan:
    def test_outputs(self, qgan_run):
        metadata = read_json(qgan_run / "metadata.json")
        assert metadata["kind"] == "qgan"
        # theta 4 + post 12 + 245; discriminator 400 + 9
        assert metadata["parameters"] == {"generator": 261, "discriminator": 409}
        assert metadata["steps"] == [1, 1, 1]
        for label in range(3):
            history = read_csv(qgan_run / f"class_{label}" / "history.csv")
            assert list(history.columns) == ["step", "d_loss", "g_loss", "V"]
            assert len(history) == 1

    def test_checkpoints_keep_optimizers_and_provenance(self, qgan_run):
        metadata = read_json(qgan_run / "metadata.json")
        for label in range(3):
            class_dir = qgan_run / f"class_{label}"
            checkpoint = load_checkpoint(class_dir / "checkpoint.json")
            assert set(checkpoint["optimizer"]) == {"generator", "discriminator"}
            assert checkpoint["optimizer"]["generator"].step == 1
            assert checkpoint["optimizer"]["discriminator"].step == 1
            provenance = checkpoint["extra"]["provenance"]
            assert provenance["class"] == label
            assert provenance["inputs_hash"] == metadata["inputs_hash"]
            assert read_csv_provenance(class_dir / "history.csv") == provenance

    def test_epochs_flag_goes_to_gan(self, tmp_path, tiny_config_path):
        assert run("train-cgan", "--config", tiny_config_path, "--epochs", "2", "--out", str(tmp_path)) == 0
        metadata = read_json(tmp_path / "metadata.json")
        assert metadata["steps"] == [2, 2, 2]
        assert metadata["config"]["train"]["epochs"] == 1


class TestAugment:
    def test_classic(self, tmp_path, tiny_config_path):
        assert run("augment", "--config", tiny_config_path, "--strategy", "classic", "--out", str(tmp_path)) == 0
        manifest = read_json(tmp_path / "augmented" / "manifest.json")
        assert manifest["counts"] == [2, 2, 2]
        assert manifest["combined_size"] == 18
        assert manifest["config"]["augment"]["n_gen"] == 6

    def test_zero_budget(self, tmp_path, tiny_config_path):
        assert run("augment", "--config", tiny_config_path, "--strategy", "classic", "--n-gen", "0",
                   "--out", str(tmp_path)) == 0
        manifest = read_json(tmp_path / "augmented" / "manifest.json")
        assert manifest["counts"] == [0, 0, 0]
        assert (tmp_path / "augmented" / "class_0.bin").stat().st_size == 0

    def test_general_with_saved_generators(self, tmp_path, tiny_config_path, qgan_run):
        out = tmp_path / "aug"
        assert run("augment", "--config", tiny_config_path, "--strategy", "general",
                   "--generators", str(qgan_run), "--out", str(out)) == 0
        manifest = read_json(out / "augmented" / "manifest.json")
        assert manifest["counts"] == [2, 2, 2]
        assert all(s["source"] == "qgan" for per_class in manifest["samples"] for s in per_class)

    def test_custom_with_saved_classifier(self, tmp_path, tiny_config_path, hqcnn_run, qgan_run):
        out = tmp_path / "aug"
        assert run("augment", "--config", tiny_config_path, "--strategy", "custom",
                   "--classifier", str(hqcnn_run / "checkpoint.json"), "--generators", str(qgan_run),
                   "--out", str(out)) == 0
        manifest = read_json(out / "augmented" / "manifest.json")
        assert sum(manifest["allocation"]) == 6
        assert all(a <= n for a, n in zip(manifest["counts"], manifest["allocation"]))
        assert manifest["profile"]["E_total"] == sum(manifest["profile"]["E"])


class TestExitCodes:
    def test_bad_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("train:\n  epochz: 1\n", encoding="utf-8")
        assert run("train-hqcnn", "--config", str(path), "--out", str(tmp_path / "o")) == 2
        assert "epochz" in capsys.readouterr().err

    def test_missing_idx(self, tmp_path):
        document = {"data": {"train_images": str(tmp_path / "nope-images"), "train_labels": str(tmp_path / "nope"),
                             "test_images": str(tmp_path / "nope"), "test_labels": str(tmp_path / "nope")}}
        path = tmp_path / "idx.yaml"
        path.write_text(yaml.safe_dump(document), encoding="utf-8")
        assert run("train-hqcnn", "--config", str(path), "--out", str(tmp_path / "o")) == 3

    def test_untrained_generators(self, tmp_path, tiny_config_path):
        gens = tmp_path / "gens"
        assert run("train-qgan", "--config", tiny_config_path, "--epochs", "0", "--out", str(gens)) == 0
        assert run("augment", "--config", tiny_config_path, "--strategy", "general", "--generators", str(gens),
                   "--out", str(tmp_path / "aug")) == 4


class TestCompareAndEvaluate:
    def test_compare_deterministic(self, tmp_path, tiny_config_path):
        for name in ("a", "b"):
            assert run("compare", "--config", tiny_config_path, "--out", str(tmp_path / name)) == 0
        first = (tmp_path / "a" / "comparison.json").read_bytes()
        assert first == (tmp_path / "b" / "comparison.json").read_bytes()

        run_record = read_json(tmp_path / "a" / "comparison.json")["runs"][0]
        assert set(run_record["strategies"]) == {"none", "classic"}
        summary = run_record["strategies"]["classic"]
        assert len(summary["seeds"]) == 2
        assert summary["average_accuracy"]["std"] >= 0.0
        assert summary["generated"] == [[2, 2, 2], [2, 2, 2]]

        curve = read_csv(tmp_path / "a" / "curve_none.csv")
        assert list(curve.columns) == ["epoch", "mean", "std", "seeds"]
        assert curve["seeds"].tolist() == [2]
        assert read_csv_provenance(tmp_path / "a" / "curve_none.csv")["inputs_hash"] == run_record["inputs_hash"]

    def test_evaluate(self, tmp_path, tiny_config_path, hqcnn_run):
        out = tmp_path / "eval"
        assert run("evaluate", "--config", tiny_config_path, "--checkpoint", str(hqcnn_run / "checkpoint.json"),
                   "--out", str(out)) == 0
        report = read_json(out / "metrics.json")["report"]
        trained = read_json(hqcnn_run / "metrics.json")["report"]
        assert report == trained
