"""CLI pipeline tests driven through main()."""

import dataclasses
import json

import numpy as np
import pytest

from coldstart import cli, data

from conftest import make_synthetic_dataset, write_movielens_files


@pytest.fixture(scope="module")
def raw_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("raw")
    ds = make_synthetic_dataset(n_users=150, n_movies=108, seed=41)
    write_movielens_files(ds, root)
    return root, ds


def run_cli(*args):
    return cli.main([str(a) for a in args])


def only(path_glob):
    matches = sorted(path_glob)
    assert len(matches) >= 1
    return matches[-1]


class TestPipeline:
    def test_full_pipeline(self, raw_files, tmp_path, capsys, monkeypatch):
        root, ds = raw_files
        out = tmp_path / "runs"
        monkeypatch.setenv("COLDSTART_DATA_DIR", str(root))

        assert run_cli("ingest", "--out-dir", out) == 0
        printed = capsys.readouterr().out
        assert f"users={ds.user_count}" in printed
        dataset_file = only(out.glob("*/dataset.npz"))
        assert dataset_file.with_suffix(".mapping.json").exists()

        assert run_cli("split", "--dataset", dataset_file, "--out-dir", out,
                       "--seed", 3) == 0
        split_file = only(out.glob("*/split.json"))

        assert run_cli("bpmf-train", "--dataset", dataset_file, "--split", split_file,
                       "--out-dir", out, "--bpmf-iterations", 25,
                       "--bpmf-burn-in", 8) == 0
        factors_file = only(out.glob("*/factors.npz"))

        assert run_cli("train", "--dataset", dataset_file, "--split", split_file,
                       "--factors", factors_file, "--out-dir", out,
                       "--epochs", 2, "--model", "q_rating") == 0
        bundle_file = only(out.glob("*/bundle.npz"))
        metrics_file = only(out.glob("*/metrics.csv"))
        header = metrics_file.read_text().splitlines()[0]
        assert header == "epoch,test_rmse,train_reward_mean,epsilon,dqn_lr,wall_seconds"

        capsys.readouterr()
        assert run_cli("eval", "--dataset", dataset_file, "--split", split_file,
                       "--bundle", bundle_file, "--out-dir", out,
                       "--questions", 4) == 0
        assert "pooled RMSE" in capsys.readouterr().out

        assert run_cli("report", "--metrics", metrics_file, "--dataset", dataset_file,
                       "--split", split_file, "--bundle", bundle_file,
                       "--out-dir", out) == 0
        series = only(out.glob("*/rmse_series.csv"))
        assert series.read_text().splitlines()[0] == "epoch,test_rmse"
        assert only(out.glob("*/sample_interviews.txt")).exists()

    def test_interview_all_unseen_still_recommends(self, raw_files, tmp_path,
                                                   monkeypatch, capsys):
        root, _ = raw_files
        out = tmp_path / "runs"
        monkeypatch.setenv("COLDSTART_DATA_DIR", str(root))
        assert run_cli("ingest", "--out-dir", out) == 0
        dataset_file = only(out.glob("*/dataset.npz"))
        assert run_cli("split", "--dataset", dataset_file, "--out-dir", out) == 0
        split_file = only(out.glob("*/split.json"))
        assert run_cli("bpmf-train", "--dataset", dataset_file, "--split", split_file,
                       "--out-dir", out, "--bpmf-iterations", 12,
                       "--bpmf-burn-in", 4) == 0
        factors_file = only(out.glob("*/factors.npz"))
        assert run_cli("train", "--dataset", dataset_file, "--split", split_file,
                       "--factors", factors_file, "--out-dir", out, "--epochs", 1) == 0
        bundle_file = only(out.glob("*/bundle.npz"))

        answers = iter(["0", "0", "0"])
        monkeypatch.setattr("builtins.input", lambda prompt="": next(answers))
        capsys.readouterr()
        assert run_cli("interview", "--dataset", dataset_file,
                       "--bundle", bundle_file, "--out-dir", out) == 0
        output = capsys.readouterr().out
        assert "Top 10 recommendations" in output
        # ten ranked lines follow the header
        tail = output.split("recommendations:")[1].strip().splitlines()
        assert len(tail) == 10

    def test_missing_artifact_names_producer(self, raw_files, tmp_path, capsys):
        root, _ = raw_files
        with pytest.raises(SystemExit) as excinfo:
            run_cli("split", "--dataset", tmp_path / "missing.npz",
                    "--out-dir", tmp_path)
        assert "coldstart ingest" in str(excinfo.value)

    def test_ingest_missing_inputs(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            run_cli("ingest", "--data-dir", tmp_path / "nowhere",
                    "--out-dir", tmp_path)
        assert "data-dir" in str(excinfo.value).lower() or "not found" in str(excinfo.value)


class TestConfigHandling:
    def test_unknown_config_key_rejected(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus_key": 1}))
        with pytest.raises(SystemExit, match="bogus_key"):
            run_cli("--config", config, "ingest", "--out-dir", tmp_path)

    def test_flag_overrides_config_file(self, raw_files, tmp_path, capsys):
        root, ds = raw_files
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"data_dir": str(root), "seed": 11}))
        out = tmp_path / "runs"
        assert run_cli("--config", config, "ingest", "--out-dir", out) == 0
        dataset_file = only(out.glob("*/dataset.npz"))

        capsys.readouterr()
        assert run_cli("--config", config, "split", "--dataset", dataset_file,
                       "--out-dir", out, "--seed", 12) == 0
        split = data.load_split(only(out.glob("*/split.json")))
        assert split.seed == 12  # flag wins over config file

    def test_help_lists_every_config_key(self, capsys):
        with pytest.raises(SystemExit):
            run_cli("train", "--help")
        text = " ".join(capsys.readouterr().out.split())
        for field in dataclasses.fields(cli.RunConfig):
            assert "--" + field.name.replace("_", "-") in text
            assert f"default: {field.default}" in text

    def test_ingest_idempotent_bytes(self, raw_files, tmp_path, monkeypatch):
        root, _ = raw_files
        monkeypatch.setenv("COLDSTART_DATA_DIR", str(root))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("ingest", "--out-dir", out_a) == 0
        assert run_cli("ingest", "--out-dir", out_b) == 0
        file_a = only(out_a.glob("*/dataset.npz"))
        file_b = only(out_b.glob("*/dataset.npz"))
        assert file_a.read_bytes() == file_b.read_bytes()
