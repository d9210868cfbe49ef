import numpy as np
import pytest

from xmpose.cli import _ablation, _load_config, build_parser, main
from xmpose.metrics import metrics_csv, read_metrics_csv

TINY_CFG = """\
n_synth = 24
n_pairs = 12
n_test = 6
hidden_dims = 8
feature_dim = 4
batch_size = 8
epochs_pretrain_depth = 1
epochs_pretrain_color = 1
epochs_joint = 1
"""


def parse(*argv):
    return build_parser().parse_args(list(argv))


@pytest.mark.parametrize("flags, tag", [((), "full"), (("--no-fm",), "no_fm"), (("--no-mmd",), "no_mmd")])
def test_ablation_flags(flags, tag):
    assert _ablation(parse("train", *flags)) == tag


def test_both_ablation_flags_are_rejected(tmp_path):
    assert main(["train", "--no-fm", "--no-mmd", "--out", str(tmp_path)]) == 1


def test_unknown_flag_prints_usage_and_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_command_exits_1():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_missing_checkpoint_is_an_io_error(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path / "nowhere")]) == 2
    assert "error:" in capsys.readouterr().err


def test_env_output_dir_wins(monkeypatch, tmp_path):
    monkeypatch.setenv("XMP_OUT", str(tmp_path / "env"))
    cfg = _load_config(parse("gen-data", "--out", str(tmp_path / "flag"), "--seed", "4"))
    assert cfg.out_dir == str(tmp_path / "env") and cfg.seed == 4
    monkeypatch.delenv("XMP_OUT")
    assert _load_config(parse("gen-data", "--out", "x")).out_dir == "x"


def test_plot_writes_svg_and_echoes_paths(tmp_path, capsys):
    rows = [{"metric": "pck", "threshold": float(t), "split": "test_color", "seed": 0,
             "ablation": "full", "value": v} for t, v in zip((0, 10, 20, 40), (0.0, 0.3, 0.6, 0.9))]
    path = tmp_path / "metrics_full.csv"
    path.write_text(metrics_csv(rows, ["mode = hand"]))
    assert main(["plot", str(path)]) == 0
    out = capsys.readouterr().out
    svg = tmp_path / "metrics_full.svg"
    assert f"data: {path}" in out and f"figure: {svg}" in out
    assert "<svg" in svg.read_text()
    values = [r["value"] for r in read_metrics_csv(path.read_text())]
    assert np.all(np.diff(values) >= 0)


def test_plot_rejects_unknown_csv(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    assert main(["plot", str(path)]) == 1
    assert main(["plot", str(tmp_path / "absent.csv")]) == 2


def test_gen_train_eval_round_trip(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    out = tmp_path / "run"
    common = ["--config", str(cfg), "--out", str(out), "--threads", "1"]
    assert main(["gen-data", *common]) == 0
    assert main(["train", "--no-mmd", *common]) == 0
    assert main(["eval", "--no-mmd", *common]) == 0
    rows = read_metrics_csv((out / "metrics_no_mmd.csv").read_text())
    assert {r["ablation"] for r in rows} == {"no_mmd"}
    assert (out / "model_no_mmd.xmpw").exists() and (out / "trainlog_pretrain.csv").exists()
    assert f"metrics: {out / 'metrics_no_mmd.csv'}" in capsys.readouterr().out
