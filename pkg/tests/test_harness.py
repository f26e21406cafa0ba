import csv
import json

import numpy as np
import pytest

from slt.checkpoint import (decode_checkpoint, describe_checkpoint, encode_checkpoint, load_checkpoint,
                            save_checkpoint)
from slt.cli import main
from slt.config import ExperimentConfig, apply_overrides, parse_config, to_text
from slt.errors import ConfigError, FormatError
from slt.harness import build_dataset, build_model, execute, run, sweep
from slt.tickets import METRIC_FIELDS

TINY = """
seed = 5
model.arch = mlp
model.hidden = 16
data.kind = synthetic-rgb
data.classes = 2
data.n = 40
data.hw = 8
data.noise = 0.2
lif.T = 2
ticket.mode = conn
ticket.pr_c = 0.5
epochs.conn = 2
optim.batch = 8
"""


def tiny(**overrides):
    cfg = parse_config(TINY)
    return apply_overrides(cfg, [f"{k}={v}" for k, v in overrides.items()])


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.lif.T == 4 and cfg.lif.lambda_decay == 0.99

    def test_parse_and_round_trip(self):
        cfg = tiny()
        assert cfg.seed == 5 and cfg.model.hidden == (16,) and cfg.ticket.mode == "conn"
        assert parse_config(to_text(cfg)) == cfg

    def test_comments_and_blank_lines(self):
        assert parse_config("# hello\n\nseed = 2  # trailing\n").seed == 2

    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError, match="model.widht"):
            parse_config("model.widht = 3")
        with pytest.raises(ConfigError, match="nosuch.key"):
            parse_config("nosuch.key = 1")

    @pytest.mark.parametrize("line, path", [
        ("ticket.pr_c = 1.0", "ticket.pr_c"),
        ("ticket.pr_p = -0.1", "ticket.pr_p"),
        ("lif.T = 0", "lif.T"),
        ("lif.lambda_decay = 0", "lif.lambda_decay"),
        ("lif.lambda_decay = 1.2", "lif.lambda_decay"),
        ("lif.T = four", "lif.T"),
        ("ticket.mode = magic", "ticket.mode"),
    ])
    def test_validation(self, line, path):
        with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
            parse_config(line)

    def test_patch_mode_needs_spikeformer(self):
        with pytest.raises(ConfigError):
            parse_config("ticket.mode = patch\nmodel.arch = convnet")

    def test_overrides(self):
        cfg = apply_overrides(tiny(), ["lif.T=3", "model.channels=4,8"])
        assert cfg.lif.T == 3 and cfg.model.channels == (4, 8)
        with pytest.raises(ConfigError):
            apply_overrides(cfg, ["lif.T"])


class TestRun:
    def test_outputs_and_schema(self, tmp_path):
        report = run(tiny(), tmp_path)
        rows = list(csv.reader((tmp_path / "metrics.csv").open()))
        assert tuple(rows[0]) == METRIC_FIELDS
        assert len(rows) == 1 + 1 + 2
        assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["mode"] == "conn" and data["accuracy_after"] == report.accuracy_after
        assert (tmp_path / "model.ckpt").exists()

    def test_metrics_are_bit_identical(self, tmp_path):
        run(tiny(), tmp_path / "a")
        run(tiny(), tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
        assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()

    def test_zero_epoch_baseline(self, tmp_path):
        cfg = tiny(**{"ticket.mode": "none", "epochs.train": 0})
        run(cfg, tmp_path)
        assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 2

    def test_report_sparsity_matches_checkpoint(self, tmp_path):
        report = run(tiny(), tmp_path)
        model = load_checkpoint(tmp_path / "model.ckpt").model
        for name, layer in model.layers().items():
            assert report.layer_sparsity[name] == layer.sparsity()

    @pytest.mark.parametrize("arch, mode", [("convnet", "conn"), ("spikeformer", "patch"),
                                            ("spikeformer", "ecpt"), ("convnet", "none")])
    def test_all_modes_run(self, tmp_path, arch, mode):
        cfg = tiny(**{"model.arch": arch, "ticket.mode": mode, "data.kind": "synthetic-dvs",
                      "data.hw": 8, "data.n": 16, "model.channels": "4", "model.dim": 8,
                      "epochs.conn": 1, "epochs.sp": 1, "epochs.train": 1})
        report = run(cfg, tmp_path)
        assert report.mode == ("none" if mode == "none" else mode)


class TestCheckpoint:
    def model(self, arch="spikeformer"):
        cfg = tiny(**{"model.arch": arch, "data.kind": "synthetic-dvs", "data.hw": 8, "data.n": 8,
                      "model.channels": "4", "model.dim": 8,
                      "ticket.mode": "ecpt" if arch == "spikeformer" else "conn"})
        ds = build_dataset(cfg)
        return cfg, ds, build_model(cfg, ds)

    @pytest.mark.parametrize("arch", ["mlp", "convnet", "spikeformer"])
    def test_round_trip_bit_exact(self, tmp_path, arch):
        cfg, ds, model = self.model(arch) if arch != "mlp" else (tiny(), build_dataset(tiny()),
                                                                 build_model(tiny(), build_dataset(tiny())))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, cfg, ticket={"indices": [0, 2]}, rng={"init": "1"})
        ck = load_checkpoint(path)
        x = ds.frames[:3].swapaxes(0, 1)
        assert ck.model(x).data.tobytes() == model(x).data.tobytes()
        for name, layer in model.layers().items():
            other = ck.model.layers()[name]
            assert other.w.data.tobytes() == layer.w.data.tobytes()
            assert other.s.data.tobytes() == layer.s.data.tobytes()
            assert other.m.tobytes() == layer.m.tobytes() and other.alpha == layer.alpha
            assert int(other.m.sum()) == int(layer.m.sum())
        assert ck.config == cfg and ck.ticket == {"indices": [0, 2]} and ck.rng == {"init": "1"}
        assert encode_checkpoint(ck.model, ck.config, ck.ticket, ck.rng) == path.read_bytes()

    def test_truncation_names_section(self, tmp_path):
        cfg, _, model = self.model()
        buf = encode_checkpoint(model, cfg)
        for cut in (len(buf) - 1, len(buf) // 2, 40):
            with pytest.raises(FormatError) as err:
                decode_checkpoint(buf[:cut])
            assert err.value.section is not None and err.value.section in str(err.value)

    def test_corruption_and_version(self, tmp_path):
        cfg, _, model = self.model()
        buf = bytearray(encode_checkpoint(model, cfg))
        flipped = bytearray(buf)
        flipped[-5] ^= 0xFF
        with pytest.raises(FormatError, match="CRC"):
            decode_checkpoint(bytes(flipped))
        bad_version = bytes(buf[:4]) + (2).to_bytes(2, "little") + bytes(buf[6:])
        with pytest.raises(FormatError, match="version"):
            decode_checkpoint(bad_version)
        with pytest.raises(FormatError, match="magic"):
            decode_checkpoint(b"NOPE" + bytes(buf[4:]))

    def test_describe(self, tmp_path):
        cfg, _, model = self.model()
        save_checkpoint(tmp_path / "m.ckpt", model, cfg)
        info = describe_checkpoint(tmp_path / "m.ckpt")
        assert info["arch"] == "spikeformer" and "layer:cpm0" in info["sections"]


class TestSweep:
    def test_single_value_equals_run(self, tmp_path):
        rows = sweep(tiny(), "pr_c", [0.5], [5], tmp_path / "sw")
        solo = execute(tiny())[1]
        assert rows[0]["mean_test_acc"] == solo.accuracy_after and rows[0]["std_test_acc"] == 0.0

    def test_summary_recomputable(self, tmp_path):
        rows = sweep(tiny(), "T", [1, 2], [0, 1], tmp_path / "sw")
        summary = list(csv.DictReader((tmp_path / "sw" / "summary.csv").open()))
        for row, written in zip(rows, summary):
            finals = []
            for seed in (0, 1):
                metrics = list(csv.DictReader((tmp_path / "sw" / f"T={row['value']}" / f"seed={seed}"
                                               / "metrics.csv").open()))
                finals.append(float(metrics[-1]["test_acc"]))
            assert float(written["mean_test_acc"]) == pytest.approx(np.mean(finals))
            assert float(written["std_test_acc"]) == pytest.approx(np.std(finals))

    def test_failures_recorded(self, tmp_path):
        rows = sweep(tiny(), "pr_c", [0.5, 1.0], [0, 1], tmp_path / "sw")
        assert rows[0]["failed"] == 0
        assert rows[1]["failed"] == 2 and rows[1]["runs"] == 2
        assert "ticket.pr_c" in (tmp_path / "sw" / "errors.txt").read_text()

    def test_worker_pool_matches_serial(self, tmp_path):
        serial = sweep(tiny(), "lambda", [0.99, 0.5], [0], tmp_path / "a", workers=1)
        pooled = sweep(tiny(), "lambda", [0.99, 0.5], [0], tmp_path / "b", workers=2)
        assert serial == pooled

    def test_unknown_axis(self, tmp_path):
        with pytest.raises(ValueError):
            sweep(tiny(), "width", [1], [0], tmp_path)


class TestCli:
    def test_run_eval_inspect(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.txt"
        cfg_path.write_text(TINY)
        out = tmp_path / "run"
        assert main(["run", "--config", str(cfg_path), "--set", "epochs.conn=1", "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["eval", str(out / "model.ckpt")]) == 0
        res = json.loads(capsys.readouterr().out)
        report = json.loads((out / "report.json").read_text())
        assert res["accuracy"] == report["accuracy_after"]
        assert main(["inspect-checkpoint", str(out / "model.ckpt")]) == 0
        assert "layer:fc0" in capsys.readouterr().out

    def test_bad_override_is_reported(self, capsys):
        assert main(["run", "--set", "lif.T=0"]) == 2
        assert "lif.T" in capsys.readouterr().err

    def test_sweep_command(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.txt"
        cfg_path.write_text(TINY)
        assert main(["sweep", "--config", str(cfg_path), "--axis", "pr_c", "--values", "0.3,0.6",
                     "--seeds", "0", "--out", str(tmp_path / "sw")]) == 0
        assert (tmp_path / "sw" / "summary.csv").exists()
