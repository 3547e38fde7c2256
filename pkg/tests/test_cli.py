import numpy as np
import pytest

from cslr import cli
from cslr import config as cfg_mod
from cslr.data import load_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.txt"
    cfg.write_text(
        "train_sentences=8\ndev_sentences=3\ntest_sentences=3\n"
        "max_glosses=3\nepochs=2\nseed=1\n"
    )
    assert cli.main(["synth", "--config", str(cfg), "--out", str(root / "ds")]) == 0
    assert cli.main(["train", "--config", str(cfg), "--data", str(root / "ds"),
                     "--out", str(root / "run")]) == 0
    return root


class TestConfigFile:
    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("not_a_key=1\n")
        with pytest.raises(cfg_mod.ConfigError, match="unknown key"):
            cfg_mod.parse_config(bad)

    def test_bad_value_reported_with_line(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("epochs=banana\n")
        with pytest.raises(cfg_mod.ConfigError, match="bad.txt:1"):
            cfg_mod.parse_config(bad)

    def test_defaults_match_schema(self):
        cfg = cfg_mod.default_config()
        assert cfg["srm_lambda"] == 0.75
        assert cfg["gamma"] == 14.0
        assert cfg["beam"] == 10
        assert cfg["lr"] == 1e-4

    def test_echo_round_trips(self, tmp_path):
        cfg = cfg_mod.default_config()
        cfg["epochs"] = 7
        cfg["milestones"] = (15, 25)
        out = tmp_path / "echo.txt"
        cfg_mod.echo_config(cfg, out)
        assert cfg_mod.parse_config(out) == cfg


class TestSynth:
    def test_layout_and_determinism(self, workspace, tmp_path):
        ds = workspace / "ds"
        for name in ("videos", "keypoints", "labels.tsv", "vocab.txt"):
            assert (ds / name).exists()
        assert (ds / "run_config.txt").exists()

    def test_refuses_nonempty_without_force(self, workspace, capsys):
        code = cli.main(["synth", "--out", str(workspace / "ds")])
        assert code == 1

    def test_seed_override_changes_content(self, workspace, tmp_path):
        cfg = workspace / "cfg.txt"
        out2 = tmp_path / "ds2"
        assert cli.main(["synth", "--config", str(cfg), "--out", str(out2),
                         "--seed", "2"]) == 0
        a = (workspace / "ds" / "labels.tsv").read_text()
        b = (out2 / "labels.tsv").read_text()
        assert a != b


class TestTrainEval:
    def test_outputs_exist(self, workspace):
        run = workspace / "run"
        for name in ("last.ckpt", "train.log", "run_config.txt"):
            assert (run / name).exists()

    def test_eval_prints_wer_line(self, workspace, capsys):
        code = cli.main(["eval", "--ckpt", str(workspace / "run" / "last.ckpt"),
                         "--data", str(workspace / "ds"), "--split", "test"])
        assert code == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[-1].startswith("WER\t")
        float(out[-1].split("\t")[1])
        assert len(out) == 4  # 3 test samples + corpus line

    def test_beam_one_equals_greedy_corpus_wer(self, workspace, capsys):
        args = ["eval", "--ckpt", str(workspace / "run" / "last.ckpt"),
                "--data", str(workspace / "ds"), "--split", "test"]
        cli.main(args + ["--beam", "1"])
        beam1 = capsys.readouterr().out.strip().splitlines()[-1]
        cli.main(args + ["--beam", "1"])
        again = capsys.readouterr().out.strip().splitlines()[-1]
        assert beam1 == again

    def test_resume_is_bit_exact(self, workspace, tmp_path):
        cfg = workspace / "cfg.txt"
        ds = workspace / "ds"
        long_out = tmp_path / "long"
        assert cli.main(["train", "--config", str(cfg), "--data", str(ds),
                         "--out", str(long_out), "--epochs", "2"]) == 0
        short_out = tmp_path / "short"
        assert cli.main(["train", "--config", str(cfg), "--data", str(ds),
                         "--out", str(short_out), "--epochs", "1"]) == 0
        resumed_out = tmp_path / "resumed"
        assert cli.main(["train", "--config", str(cfg), "--data", str(ds),
                         "--out", str(resumed_out), "--epochs", "2",
                         "--from", str(short_out / "last.ckpt")]) == 0
        a = (long_out / "last.ckpt").read_bytes()
        b = (resumed_out / "last.ckpt").read_bytes()
        assert a == b

    def test_lambda_zero_matches_no_srm_backbone_gradients(self, workspace):
        # --lambda 0 keeps the branch but annihilates its backbone gradient,
        # so the learned backbone equals a --no-srm run parameter for parameter
        from cslr.train import load_checkpoint

        cfg = workspace / "cfg.txt"
        ds = workspace / "ds"
        out_a = workspace / "lam0"
        out_b = workspace / "nosrm"
        assert cli.main(["train", "--config", str(cfg), "--data", str(ds),
                         "--out", str(out_a), "--lambda", "0", "--epochs", "1"]) == 0
        assert cli.main(["train", "--config", str(cfg), "--data", str(ds),
                         "--out", str(out_b), "--no-srm", "--epochs", "1"]) == 0
        a = load_checkpoint(out_a / "last.ckpt")
        b = load_checkpoint(out_b / "last.ckpt")
        for name in a:
            if name.startswith(("visual.", "seq.", "head.", "see.")):
                np.testing.assert_array_equal(a[name], b[name], err_msg=name)


class TestWerCommand:
    def test_appendix_pair_prints_fifty(self, tmp_path, capsys):
        ref = tmp_path / "ref.txt"
        hyp = tmp_path / "hyp.txt"
        ref.write_text("A A B C A D\n")
        hyp.write_text("A C C A D B\n")
        assert cli.main(["wer", str(ref), str(hyp)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1] == "WER\t50.00"

    def test_identical_files_zero(self, tmp_path, capsys):
        ref = tmp_path / "r.txt"
        hyp = tmp_path / "h.txt"
        ref.write_text("A B\nC\n")
        hyp.write_text("A B\nC\n")
        assert cli.main(["wer", str(ref), str(hyp)]) == 0
        assert capsys.readouterr().out.strip().splitlines()[-1] == "WER\t0.00"

    def test_mismatched_line_counts_exit_2(self, tmp_path, capsys):
        ref = tmp_path / "r.txt"
        hyp = tmp_path / "h.txt"
        ref.write_text("A\nB\n")
        hyp.write_text("A\n")
        assert cli.main(["wer", str(ref), str(hyp)]) == 2


class TestProbeCommand:
    def test_prints_probe_accuracy(self, workspace, capsys):
        code = cli.main(["probe", "--ckpt", str(workspace / "run" / "last.ckpt"),
                         "--data", str(workspace / "ds")])
        assert code == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("probe_acc\t")
        val = float(line.split("\t")[1])
        assert 0.0 <= val <= 1.0


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        assert cli.main(["train"]) == 1  # missing required args

    def test_unknown_command_is_1(self, capsys):
        assert cli.main(["frobnicate"]) == 1

    def test_missing_data_is_2(self, tmp_path, capsys):
        assert cli.main(["eval", "--ckpt", str(tmp_path / "none.ckpt"),
                         "--data", str(tmp_path / "none")]) == 2
