import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from daf3d import metrics
from daf3d.cli import main, stats_report
from daf3d.stats import rank_sum_test
from daf3d.volume_data import load_mask, load_volume, read_manifest

from oracles import enum_rank_sum_p

SMALL_INI = """
[data]
folds = 2

[data.phantom]
shape = (16, 16, 8)
semi_axes_min = (4.0, 4.0, 2.0)
semi_axes_max = (6.0, 6.0, 3.0)

[network]
pyramid_channels = 16
fused_channels = 16

[network.backbone]
stem_channels = 8
channels = (8, 16, 16, 32)
blocks = (1, 1, 1, 1)
cardinality = 4

[train]
epochs = 1
seed = 7
"""

COMMANDS = ["synth", "train", "crossval", "predict", "evaluate", "stats"]


@pytest.fixture
def small_ini(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL_INI)
    return p


def _worked(name):
    return str(resources.files("daf3d").joinpath(f"data/{name}"))


@pytest.mark.parametrize("cmd", [None] + COMMANDS)
def test_help_exits_zero(cmd, capsys):
    argv = ["--help"] if cmd is None else [cmd, "--help"]
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 0


@pytest.mark.parametrize("cmd", COMMANDS)
def test_unknown_flag_exits_two(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--no-such-flag"])
    assert e.value.code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "daf3d", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "synth" in r.stdout


def test_synth_count_zero(tmp_path, small_ini):
    assert main(["synth", "--config", str(small_ini), "--count", "0", "--out", str(tmp_path / "o")]) == 0
    assert len(read_manifest(tmp_path / "o" / "manifest.csv")) == 0
    assert (tmp_path / "o" / "config.resolved.ini").exists()


def test_synth_deterministic(tmp_path, small_ini):
    for d in ("a", "b"):
        assert main(["synth", "--config", str(small_ini), "--count", "8", "--seed", "7",
                     "--out", str(tmp_path / d)]) == 0
    ma, mb = read_manifest(tmp_path / "a" / "manifest.csv"), read_manifest(tmp_path / "b" / "manifest.csv")
    assert len(ma) == 8 and ma.folds is not None
    for ea, eb in zip(ma.entries, mb.entries):
        assert np.array_equal(load_volume(ea.volume_path).data, load_volume(eb.volume_path).data)
        assert np.array_equal(load_mask(ea.mask_path).data, load_mask(eb.mask_path).data)


def test_synth_invalid_shape_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[data.phantom]\nshape = (4, 64, 32)\n")
    assert main(["synth", "--config", str(bad), "--count", "1", "--out", str(tmp_path / "o")]) == 2
    assert "shape" in capsys.readouterr().err


def test_bad_config_key_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlearning_rate = 1\n")
    assert main(["synth", "--config", str(bad), "--count", "1", "--out", str(tmp_path / "o")]) == 2


def test_unwritable_out_exits_two(tmp_path, small_ini):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--config", str(small_ini), "--count", "1", "--out", str(blocker / "sub")]) == 2


def test_missing_manifest_exits_one(tmp_path, small_ini):
    assert main(["train", "--config", str(small_ini), "--manifest", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path / "o")]) == 1


def test_pipeline(tmp_path, small_ini, capsys):
    data, run, pred, ev = (tmp_path / d for d in ("data", "run", "pred", "eval"))
    cfg = ["--config", str(small_ini)]
    assert main(["synth", *cfg, "--count", "2", "--out", str(data)]) == 0
    man = str(data / "manifest.csv")
    assert main(["train", *cfg, "--manifest", man, "--out", str(run)]) == 0
    ckpt = run / "checkpoints" / "epoch_001.ckpt"
    assert ckpt.exists() and (run / "checkpoints" / "curve.csv").exists()
    assert main(["predict", *cfg, "--checkpoint", str(ckpt), "--manifest", man, "--out", str(pred),
                 "--dump-attention", str(pred / "att")]) == 0
    assert "inference" in capsys.readouterr().out
    assert len(list((pred / "att").glob("*.raw"))) == 8
    assert main(["evaluate", *cfg, "--manifest", man, "--pred", str(pred / "predictions.csv"),
                 "--out", str(ev)]) == 0
    reps = metrics.read_reports_csv(ev / "evaluation.csv")
    assert len(reps) == 2
    # resolved config reproduces the run settings
    from daf3d.config import load_config
    assert load_config(run / "config.resolved.ini").train.seed == 7


def test_evaluate_identity(tmp_path, small_ini):
    data = tmp_path / "data"
    assert main(["synth", "--config", str(small_ini), "--count", "3", "--out", str(data)]) == 0
    man = str(data / "manifest.csv")
    assert main(["evaluate", "--manifest", man, "--pred", man, "--out", str(tmp_path / "ev")]) == 0
    for r in metrics.read_reports_csv(tmp_path / "ev" / "evaluation.csv"):
        assert (r.dice, r.jaccard, r.cc, r.precision, r.recall) == (1.0,) * 5
        assert r.adb == 0.0 and r.hd95 == 0.0


def test_crossval_command(tmp_path, small_ini):
    data = tmp_path / "data"
    assert main(["synth", "--config", str(small_ini), "--count", "4", "--out", str(data)]) == 0
    assert main(["crossval", "--config", str(small_ini), "--manifest", str(data / "manifest.csv"),
                 "--out", str(tmp_path / "cv")]) == 0
    assert len(metrics.read_reports_csv(tmp_path / "cv" / "crossval.csv")) == 4
    assert (tmp_path / "cv" / "crossval_table.txt").exists()


def test_stats_identical_csvs(capsys):
    a = _worked("worked_method_a.csv")
    assert main(["stats", a, a]) == 0
    text = stats_report([a, a])
    rows = text.split("One-way ANOVA")[0].strip().splitlines()[2:]
    assert len(rows) == 7
    assert all(r.split("\t")[1] == "1" for r in rows)


def test_stats_worked_example_matches_enumeration():
    a, b = _worked("worked_method_a.csv"), _worked("worked_method_b.csv")
    ra, rb = metrics.read_reports_csv(a), metrics.read_reports_csv(b)
    text = stats_report([a, b])
    lines = dict(l.split("\t", 1) for l in text.split("One-way ANOVA")[0].strip().splitlines()[2:])
    for m in metrics.METRIC_NAMES:
        xs, ys = [getattr(r, m) for r in ra], [getattr(r, m) for r in rb]
        oracle = enum_rank_sum_p(xs, ys)
        assert abs(rank_sum_test(xs, ys).pvalue - oracle) < 1e-12
        assert float(lines[m]) == pytest.approx(oracle, rel=1e-5)


def test_stats_needs_two(capsys):
    assert main(["stats", _worked("worked_method_a.csv")]) == 2
    assert main(["stats", "nope1.csv", "nope2.csv"]) == 1
