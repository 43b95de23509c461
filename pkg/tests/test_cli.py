import csv
import json
import os
from pathlib import Path

import pytest

import countlab.training as training
from countlab.cells import CellKind
from countlab.cli import (
    cmd_eval,
    cmd_generate,
    cmd_gradcheck,
    cmd_regress,
    cmd_train,
    cmd_zigzag,
    load_campaign,
    main,
)
from countlab.config import default_config, load_config
from countlab.dyck import SplitName
from countlab.errors import ConfigError, DataError
from countlab.runio import atomic_write_text
from countlab.training import LossKind


NANO_TOML = """
seed = 7
out_dir = "{out}"

[datasets.train]
count = 100
min_len = 2
max_len = 24

[datasets.validation]
count = 50
min_len = 2
max_len = 24

[datasets.long]
count = 30
min_len = 26
max_len = 50

[datasets.verylong]
count = 8
min_len = 120
max_len = 120

[zigzag]
js = [5, 10, 30]
total_len = 120

[training]
runs_per_kind = 2
epochs = 3
checkpoint_epochs = [1, 2, 3]
"""


@pytest.fixture()
def nano_config(tmp_path):
    cfg_path = tmp_path / "nano.toml"
    cfg_path.write_text(NANO_TOML.format(out=tmp_path / "out"))
    return cfg_path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One generated+trained nano pipeline shared by the read-only command tests."""
    tmp = tmp_path_factory.mktemp("pipeline")
    cfg_path = tmp / "nano.toml"
    cfg_path.write_text(NANO_TOML.format(out=tmp / "out"))
    config = load_config(cfg_path)
    cmd_generate(config)
    cmd_train(config)
    return cfg_path, config


class TestLoadConfig:
    def test_defaults_match_full_scale(self, tmp_path):
        p = tmp_path / "empty.toml"
        p.write_text("")
        cfg = load_config(p)
        assert cfg.datasets[SplitName.TRAIN].count == 10000
        assert cfg.datasets[SplitName.VALIDATION].count == 5000
        assert cfg.datasets[SplitName.LONG].min_len == 52
        assert cfg.datasets[SplitName.VERYLONG].count == 100
        assert cfg.epochs == 30
        assert cfg.checkpoint_epochs == (1, 5, 10, 15, 20, 25)
        assert cfg.campaigns[CellKind.LSTM].runs == 10
        assert cfg.campaigns[CellKind.RELU].runs == 30  # train 30, keep 10 best
        assert cfg.campaigns[CellKind.RELU].select == 10
        assert cfg.lr[CellKind.GRU] == 0.001
        assert cfg.lr[CellKind.LSTM] == 0.01
        assert cfg.loss is LossKind.MSE

    def test_paper_config_relu_campaign(self):
        cfg = load_config(Path(__file__).parent.parent / "configs" / "paper.toml")
        assert cfg.campaigns[CellKind.RELU].runs == 30
        assert cfg.campaigns[CellKind.RELU].select == 10
        assert cfg.campaigns[CellKind.LSTM].runs == 10

    def test_scale_flag_multiplies_resizable_splits_only(self):
        base = Path(__file__).parent.parent / "configs" / "paper.toml"
        cfg = load_config(base, scale=0.2)
        assert cfg.datasets[SplitName.TRAIN].count == 2000
        assert cfg.datasets[SplitName.VALIDATION].count == 1000
        assert cfg.datasets[SplitName.LONG].count == 1000
        assert cfg.datasets[SplitName.VERYLONG].count == 100  # pinned
        assert len(cfg.zigzag_js) == 10  # pinned

    def test_bad_toml_is_config_error(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("seed = [unclosed")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nowhere.toml")

    def test_indivisible_zigzag_rejected(self, tmp_path):
        p = tmp_path / "zz.toml"
        p.write_text("[zigzag]\njs = [7]\ntotal_len = 2000\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_kinds_filter(self, nano_config):
        cfg = load_config(nano_config, kinds=(CellKind.LSTM,))
        assert set(cfg.campaigns) == {CellKind.LSTM}

    def test_seed_override_rewires_derived_seeds(self, nano_config):
        a = load_config(nano_config)
        b = load_config(nano_config, seed_override=99)
        assert a.datasets[SplitName.TRAIN].seed != b.datasets[SplitName.TRAIN].seed
        assert b.run_seed(CellKind.LSTM, 0) == 99 + 1000

    def test_env_var_overrides_out_dir(self, nano_config, monkeypatch, tmp_path):
        monkeypatch.setenv("COUNTLAB_OUT", str(tmp_path / "elsewhere"))
        cfg = load_config(nano_config)
        assert cfg.out_dir == tmp_path / "elsewhere"

    def test_default_config_valid(self):
        default_config().validate()


class TestGenerate:
    def test_files_manifests_and_determinism(self, nano_config):
        config = load_config(nano_config)
        paths = cmd_generate(config)
        for p in paths:
            assert p.exists()
        assert len(config.split_file(SplitName.TRAIN).read_text().splitlines()) == 100
        manifest = json.loads(config.manifest_file(SplitName.TRAIN).read_text())
        assert set(manifest) == {"name", "count", "minLen", "maxLen", "pcfgP", "pcfgQ", "seed", "file"}
        assert manifest["count"] == 100

        before = {p: p.read_bytes() for p in paths}
        cmd_generate(config)  # rerun must be byte-identical
        for p, data in before.items():
            assert p.read_bytes() == data

    def test_splits_pairwise_disjoint(self, nano_config):
        from countlab.dyck import read_split

        config = load_config(nano_config)
        cmd_generate(config)
        texts = {}
        for name in (SplitName.TRAIN, SplitName.VALIDATION, SplitName.LONG):
            texts[name] = read_split(name, config.split_file(name)).texts()
        assert not (texts[SplitName.TRAIN] & texts[SplitName.VALIDATION])
        assert not (texts[SplitName.TRAIN] & texts[SplitName.LONG])
        assert not (texts[SplitName.VALIDATION] & texts[SplitName.LONG])


class TestTrain:
    def test_run_dirs_and_selection(self, pipeline):
        _, config = pipeline
        for kind in CellKind:
            records, selected = load_campaign(config, kind)
            assert len(records) == 2
            assert len(selected) == 2
            for rec in records:
                ckpts = [em for em in rec.epochs if em.checkpoint]
                assert len(ckpts) >= 2
                for em in ckpts:
                    assert em.checkpoint.exists()

    def test_missing_datasets_is_data_error(self, nano_config, tmp_path, monkeypatch):
        monkeypatch.setenv("COUNTLAB_OUT", str(tmp_path / "fresh"))
        config = load_config(nano_config)
        with pytest.raises(DataError):
            cmd_train(config)

    def test_select_k_runs(self, tmp_path):
        cfg_path = tmp_path / "sel.toml"
        cfg_path.write_text(
            NANO_TOML.format(out=tmp_path / "out") + "\n[training.relu]\nruns = 4\nselect = 2\n"
        )
        config = load_config(cfg_path, kinds=(CellKind.RELU,))
        cmd_generate(config)
        cmd_train(config)
        records, selected = load_campaign(config, CellKind.RELU)
        assert len(records) == 4
        assert len(selected) == 2

    def test_parallel_jobs_match_sequential(self, tmp_path):
        outputs = {}
        for jobs, label in ((1, "seq"), (3, "par")):
            cfg_path = tmp_path / f"{label}.toml"
            cfg_path.write_text(NANO_TOML.format(out=tmp_path / label))
            config = load_config(cfg_path, jobs=jobs, kinds=(CellKind.LSTM,))
            cmd_generate(config)
            cmd_train(config)
            outputs[label] = sorted((tmp_path / label / "runs").rglob("*.ckpt.json"))
        assert len(outputs["seq"]) == len(outputs["par"]) > 0
        for a, b in zip(outputs["seq"], outputs["par"]):
            assert a.read_bytes() == b.read_bytes()


class TestEval:
    def test_oracle_scores_100_everywhere(self, pipeline, capsys):
        _, config = pipeline
        out = cmd_eval(config, oracle=True)
        stdout = capsys.readouterr().out
        assert "RELU-oracle" in stdout and "none" in stdout
        rows = list(csv.DictReader(open(out / "eval.csv")))
        assert {r["split"] for r in rows} == {"TRAIN", "VALIDATION", "LONG", "VERYLONG"}
        for r in rows:
            assert float(r["seqAccuracy"]) == 100.0
        fpf_rows = list(csv.DictReader(open(out / "fpf.csv")))
        assert all(r["fpf"] == "none" and r["censored"] == "1" for r in fpf_rows)

    def test_trained_models_rows(self, pipeline):
        _, config = pipeline
        out = cmd_eval(config)
        rows = list(csv.DictReader(open(out / "eval.csv")))
        # 3 kinds x 2 runs x 4 splits
        assert len(rows) == 24
        fpf_rows = list(csv.DictReader(open(out / "fpf.csv")))
        assert len(fpf_rows) == 3 * 2 * 8  # verylong has 8 words

    def test_saturation_rows(self, pipeline):
        _, config = pipeline
        out = cmd_eval(config)
        rows = list(csv.DictReader(open(out / "saturation.csv")))
        # 2 LSTM runs x 4 gates + 2 GRU runs x 3 gates; ReLU has no squashing gates
        assert len(rows) == 2 * 4 + 2 * 3
        gates = {r["gate"] for r in rows}
        assert gates == {"i", "f", "o", "c", "z", "r", "h"}
        for r in rows:
            assert 0.0 <= float(r["fracSaturated"]) <= 1.0
            assert float(r["min"]) <= float(r["mean"]) <= float(r["max"])

    def test_missing_campaign_is_data_error(self, nano_config, tmp_path, monkeypatch):
        monkeypatch.setenv("COUNTLAB_OUT", str(tmp_path / "void"))
        config = load_config(nano_config)
        cmd_generate(config)
        with pytest.raises(DataError) as exc:
            cmd_eval(config)
        assert "campaign" in str(exc.value)


class TestZigzag:
    def test_oracle_all_censored(self, pipeline):
        _, config = pipeline
        out = cmd_zigzag(config, oracle=True)
        hist_rows = list(csv.DictReader(open(out / "histogram.csv")))
        assert all(int(r["count"]) == 0 for r in hist_rows)
        assert all(int(r["censoredCount"]) == 1 for r in hist_rows)
        zz_rows = list(csv.DictReader(open(out / "zigzag_fpf.csv")))
        assert {r["j"] for r in zz_rows} == {"5", "10", "30"}

    def test_trained_models_histograms(self, pipeline):
        _, config = pipeline
        out = cmd_zigzag(config)
        hist_rows = list(csv.DictReader(open(out / "histogram.csv")))
        kinds = {r["kind"] for r in hist_rows}
        assert kinds == {"LSTM", "GRU", "RELU"}
        deltas = list(csv.DictReader(open(out / "deltas.csv")))
        assert {r["token"] for r in deltas} <= {"(", ")"}
        assert len(deltas) > 0


class TestRegress:
    def test_writes_regressions(self, pipeline):
        _, config = pipeline
        out = cmd_regress(config)
        rows = list(csv.DictReader(open(out / "regress.csv")))
        assert len(rows) == 9  # 3 kinds x 3 loss splits
        for r in rows:
            assert int(r["n"]) == 6  # 2 runs x 3 checkpoint epochs
            assert 0.0 <= float(r["r2"]) <= 1.0
        scatter = list(csv.DictReader(open(out / "scatter.csv")))
        assert len(scatter) == 18  # 3 kinds x 6 checkpoints

    def test_single_checkpoint_insufficient(self, tmp_path):
        cfg_path = tmp_path / "one.toml"
        cfg_path.write_text(
            NANO_TOML.format(out=tmp_path / "out").replace(
                "epochs = 3", "epochs = 1"
            ).replace("checkpoint_epochs = [1, 2, 3]", "checkpoint_epochs = [1]")
            + "\n[training.lstm]\nruns = 1\nselect = 1\n"
        )
        config = load_config(cfg_path, kinds=(CellKind.LSTM,))
        cmd_generate(config)
        cmd_train(config)
        assert main(["regress", "--config", str(cfg_path), "--kinds", "lstm"]) == 3


class TestGradcheckCommand:
    def test_clean_build_passes(self, capsys):
        assert cmd_gradcheck() is True
        out = capsys.readouterr().out
        assert out.count("PASS") == 3
        for kind in CellKind:
            assert kind.value in out

    def test_sign_flip_detected(self, monkeypatch):
        original = training.bptt_grads

        def corrupted(params, tokens, targets, loss=LossKind.MSE):
            loss_val, grads = original(params, tokens, targets, loss)
            grads["V"] = grads["V"] * -1.0
            return loss_val, grads

        monkeypatch.setattr(training, "bptt_grads", corrupted)
        assert cmd_gradcheck() is False

    def test_exit_codes(self, monkeypatch):
        assert main(["gradcheck"]) == 0


class TestMainExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[zigzag]\njs = [7]\ntotal_len = 2000\n")
        assert main(["generate", "--config", str(bad)]) == 2

    def test_data_error_is_3(self, nano_config, tmp_path, monkeypatch):
        monkeypatch.setenv("COUNTLAB_OUT", str(tmp_path / "nothing"))
        assert main(["eval", "--config", str(nano_config)]) == 3

    def test_generate_via_main(self, nano_config, tmp_path, monkeypatch):
        monkeypatch.setenv("COUNTLAB_OUT", str(tmp_path / "gen-main"))
        assert main(["generate", "--config", str(nano_config)]) == 0
        assert (tmp_path / "gen-main" / "data" / "train.txt").exists()

    def test_seed_flag_changes_data(self, nano_config, tmp_path, monkeypatch):
        monkeypatch.setenv("COUNTLAB_OUT", str(tmp_path / "a"))
        assert main(["generate", "--config", str(nano_config)]) == 0
        monkeypatch.setenv("COUNTLAB_OUT", str(tmp_path / "b"))
        assert main(["generate", "--config", str(nano_config), "--seed", "123"]) == 0
        a = (tmp_path / "a" / "data" / "train.txt").read_bytes()
        b = (tmp_path / "b" / "data" / "train.txt").read_bytes()
        assert a != b


class TestAtomicWrites:
    def test_no_temp_residue_on_success(self, tmp_path):
        target = tmp_path / "file.txt"
        atomic_write_text(target, "hello\n")
        assert target.read_text() == "hello\n"
        assert list(tmp_path.glob("*.tmp")) == []

    def test_failure_leaves_target_untouched(self, tmp_path, monkeypatch):
        target = tmp_path / "file.txt"
        atomic_write_text(target, "original\n")

        real_replace = os.replace

        def boom(src, dst):
            raise OSError("simulated crash at rename")

        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(OSError):
            atomic_write_text(target, "partial garbage")
        monkeypatch.setattr(os, "replace", real_replace)
        assert target.read_text() == "original\n"
        assert list(tmp_path.glob("*.tmp")) == []
