import csv
import math

import numpy as np
import pytest

from drltrade import data as D
from drltrade.cli import main, max_drawdown, rank_models, read_summary
from drltrade.config import RunConfig
from drltrade.errors import ConfigError
from drltrade.policy import ArchSpec, build, save_policy

SPLIT = """
split.train_start = 2015-05-05
split.train_end = 2016-02-01
split.eval_start = 2016-02-02
split.eval_end = 2016-06-24
"""


def write_config(tmp_path, body="", name="run.txt"):
    p = tmp_path / name
    p.write_text("synth.n_days = 300\nenv.window = 10\n" + SPLIT + body)
    return str(p)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_files_and_rerun(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("SYN00.csv", "SYN01.csv"):
        lines = (tmp_path / "a" / name).read_text().splitlines()
        assert len(lines) == 301 and lines[0] == ",".join(D.BAR_HEADER)
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "resolved_config.txt").exists()


def test_synth_zero_days(tmp_path, capsys):
    cfg = write_config(tmp_path, "synth.n_days = 0\n")
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "a")]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: config:") and "\n" not in err


def test_synth_unwritable_path(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path)
    assert main(["synth", "--config", cfg, "--out", str(blocker / "sub")]) == 6
    assert capsys.readouterr().err.startswith("error: io:")


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_config(tmp_path, "ppo.learnig_rate = 1\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == 2
    assert "learnig_rate" in capsys.readouterr().err


def test_config_text_round_trip():
    cfg = RunConfig.from_text("seed = 3\narch.hidden = 32, 16  # two layers\n")
    again = RunConfig.from_text(cfg.to_text())
    assert again.values == cfg.values and again["arch.hidden"] == (32, 16)
    with pytest.raises(ConfigError, match="<config>:1"):
        RunConfig.from_text("seed three")


def test_features_reports_and_reloads(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["features", "--config", cfg, "--out", str(tmp_path / "f")]) == 0
    out = capsys.readouterr().out
    assert "35 columns" in out and "2015-05-05" in out
    loaded = D.load_frame(tmp_path / "f" / "frame.csv")
    bars = D.synth_market(2, 300, 0, 0.001, 0.005, 10.0)
    frame = D.build_feature_frame(bars, D.synth_vix(300, 0))
    assert loaded.tickers == frame.tickers and loaded.features == frame.features
    np.testing.assert_array_equal(loaded.dates, frame.dates)
    np.testing.assert_array_equal(loaded.values, frame.values)


def test_features_from_files_missing_ticker(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["synth", "--config", cfg, "--out", str(tmp_path / "bars")])
    files = write_config(tmp_path, f"data.source = files\ndata.dir = {tmp_path / 'bars'}\n"
                                   f"data.vix = {tmp_path / 'bars' / 'vix.csv'}\n", "files.txt")
    assert main(["features", "--config", files, "--out", str(tmp_path / "f")]) == 0
    assert "35 columns" in capsys.readouterr().out
    missing = write_config(tmp_path, f"data.source = files\ndata.dir = {tmp_path / 'bars'}\n"
                                     "data.tickers = SYN00,NOPE\n", "missing.txt")
    assert main(["features", "--config", missing, "--out", str(tmp_path / "g")]) == 3
    assert "NOPE" in capsys.readouterr().err


TRAIN = "ppo.total_timesteps = 4096\nppo.n_epochs = 1\nppo.minibatch_size = 256\ntrain.checkpoint_every = 1\n"


def test_train_log_rows_and_determinism(tmp_path):
    cfg = write_config(tmp_path, TRAIN)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    rows = read_rows(tmp_path / "a" / "train_log.csv")
    assert [int(r["iteration"]) for r in rows] == [1, 2]
    assert all(math.isfinite(float(v)) for r in rows for v in r.values())
    for rel in ("train_log.csv", "final.manifest", "final.bin", "checkpoints/iter_00002.bin"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert (tmp_path / "a" / "resolved_config.txt").exists()


def test_train_grcnn_too_small(tmp_path, capsys):
    cfg = write_config(tmp_path, "arch.kind = grcnn\nfeatures.subset = close\n")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == 4
    assert "conv1" in capsys.readouterr().err


def test_train_requires_split(tmp_path, capsys):
    p = tmp_path / "nosplit.txt"
    p.write_text("synth.n_days = 300\n")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "t")]) == 2
    assert "split.train_start" in capsys.readouterr().err


def zero_actor_checkpoint(tmp_path, kind="mlp", n_columns=35):
    net = build(ArchSpec(kind), (10, n_columns), 2, seed=5)
    net.params["actor.weight"].data[:] = 0.0
    net.params["actor.bias"].data[:] = 0.0
    save_policy(tmp_path / "zero", net)
    return str(tmp_path / "zero")


def test_evaluate_zero_actor_never_trades(tmp_path):
    cfg = write_config(tmp_path)
    ck = zero_actor_checkpoint(tmp_path)
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "e"), "--checkpoint", ck]) == 0
    rows = read_rows(tmp_path / "e" / "evaluation.csv")
    assert rows[0]["date"] == "2016-02-02" and rows[-1]["date"] == "2016-06-24"
    assert all(float(r["cumulative_reward"]) == 0.0 for r in rows)
    assert all(float(r["portfolio_value"]) == 1e6 for r in rows)


def test_evaluate_prefix_sum_and_telescoping(tmp_path):
    cfg = write_config(tmp_path, TRAIN)
    main(["train", "--config", cfg, "--out", str(tmp_path / "t")])
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "e"),
                 "--checkpoint", str(tmp_path / "t" / "final")]) == 0
    rows = read_rows(tmp_path / "e" / "evaluation.csv")
    rewards = np.array([float(r["reward"]) for r in rows])
    cumulative = np.array([float(r["cumulative_reward"]) for r in rows])
    values = np.array([float(r["portfolio_value"]) for r in rows])
    assert cumulative.tobytes() == np.cumsum(rewards).tobytes()
    assert abs(cumulative[-1] - 1e-4 * (values[-1] - values[0])) <= 1e-9
    summary = read_summary(tmp_path / "e" / "summary.txt")
    assert float(summary["final_cumulative_reward"]) == cumulative[-1]
    assert float(summary["max_drawdown"]) == max_drawdown(values)
    assert (tmp_path / "e" / "trajectory.csv").exists()
    assert (tmp_path / "e" / "resolved_config.txt").exists()


def test_evaluate_architecture_mismatch(tmp_path, capsys):
    cfg = write_config(tmp_path)
    ck = zero_actor_checkpoint(tmp_path, n_columns=494)
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "e"), "--checkpoint", ck]) == 4
    assert capsys.readouterr().err.startswith("error: architecture:")


def test_evaluate_missing_checkpoint(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "e"),
                 "--checkpoint", str(tmp_path / "nothing")]) == 3


def test_max_drawdown():
    assert max_drawdown(np.array([100.0, 120.0, 90.0, 130.0, 117.0])) == pytest.approx(0.25)
    assert max_drawdown(np.array([1.0, 2.0, 3.0])) == 0.0


def test_rank_models():
    assert rank_models({"mlp": 1.0, "cnn_v1": 3.0, "grcnn": 2.0}) == [["cnn_v1"], ["grcnn"], ["mlp"]]
    assert rank_models({"mlp": 1.0, "cnn_v1": 1.0, "grcnn": 1.0}) == [["mlp", "cnn_v1", "grcnn"]]


def test_compare_identical_checkpoints_tie(tmp_path):
    cfg = write_config(tmp_path, TRAIN)
    main(["train", "--config", cfg, "--out", str(tmp_path / "t")])
    for m in ("mlp", "cnn_v1", "grcnn"):
        main(["evaluate", "--config", cfg, "--out", str(tmp_path / m), "--checkpoint", str(tmp_path / "t" / "final")])
    cmp_cfg = write_config(tmp_path, "".join(f"compare.{m} = {tmp_path / m}\n" for m in ("mlp", "cnn_v1", "grcnn")),
                           "cmp.txt")
    assert main(["compare", "--config", cmp_cfg, "--out", str(tmp_path / "c")]) == 0
    with open(tmp_path / "c" / "comparison.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["date", "mlp", "cnn_v1", "grcnn"]
    rows = read_rows(tmp_path / "c" / "comparison.csv")
    assert all(r["mlp"] == r["cnn_v1"] == r["grcnn"] for r in rows)
    summary = read_summary(tmp_path / "c" / "comparison_summary.txt")
    assert summary["tied"] == "true" and summary["ranking"] == "mlp = cnn_v1 = grcnn"
    final = read_summary(tmp_path / "mlp" / "summary.txt")["final_cumulative_reward"]
    assert summary["final.mlp"] == final
    assert (tmp_path / "c" / "resolved_config.txt").exists()


def test_compare_date_mismatch(tmp_path, capsys):
    cfg = write_config(tmp_path)
    ck = zero_actor_checkpoint(tmp_path)
    short = write_config(tmp_path, "split.eval_end = 2016-05-02\n", "short.txt")
    main(["evaluate", "--config", cfg, "--out", str(tmp_path / "mlp"), "--checkpoint", ck])
    main(["evaluate", "--config", cfg, "--out", str(tmp_path / "cnn_v1"), "--checkpoint", ck])
    main(["evaluate", "--config", short, "--out", str(tmp_path / "grcnn"), "--checkpoint", ck])
    cmp_cfg = write_config(tmp_path, "".join(f"compare.{m} = {tmp_path / m}\n" for m in ("mlp", "cnn_v1", "grcnn")),
                           "cmp.txt")
    assert main(["compare", "--config", cmp_cfg, "--out", str(tmp_path / "c")]) == 3
    assert "grcnn" in capsys.readouterr().err
