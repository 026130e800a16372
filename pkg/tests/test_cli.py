import csv
from dataclasses import replace

import numpy as np
import pytest

from evmfusion import gradsuite
from evmfusion.cli import main, read_metric_table
from evmfusion.engine import grad_check, using
from evmfusion.pipeline import RunConfig, TrainConfig, dump_text, from_flat, parse_text
from evmfusion.pipeline.variants import VARIANT_NAMES

COMMANDS = ("make-data", "train", "eval", "explain", "ablate", "gradcheck")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-data", "--out", str(root / "data"), "--per-class", "4", "--size", "8", "--seed", "4"]) == 0
    cfg = RunConfig(model=gradsuite.tiny_model_config(), train=TrainConfig(epochs=2, batch_size=4))
    (root / "tiny.txt").write_text(dump_text(cfg))
    return root


def run_train(ws, out, variant="DUHF", *extra):
    return main(["train", "--data", str(ws / "data"), "--variant", variant, "--out", str(out),
                 "--config", str(ws / "tiny.txt"), *extra])


@pytest.mark.parametrize("argv", [["--help"]] + [[c, "--help"] for c in COMMANDS])
def test_help_exits_zero(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_missing_data_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--variant", "DUHF", "--out", "x"])
    assert exc.value.code == 2 and "usage" in capsys.readouterr().err


def test_no_command_is_usage_error():
    assert main([]) == 2


def test_bad_variant_lists_names(workspace, tmp_path, capsys):
    assert run_train(workspace, tmp_path, "DUXF") == 2
    err = capsys.readouterr().err
    assert all(name in err for name in VARIANT_NAMES)


def test_unreadable_data_exit_3(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--variant", "DU", "--out", str(tmp_path)]) == 3


def test_unknown_override_rejected(capsys):
    assert main(["--set", "model.k_naf=3", "--dump-config"]) == 2
    assert "model.k_naf" in capsys.readouterr().err


def test_dump_config_prints_every_default(capsys):
    assert main(["--dump-config"]) == 0
    text = capsys.readouterr().out
    assert from_flat(parse_text(text)) == RunConfig()
    assert main(["--set", "train.epochs=7", "--dump-config"]) == 0
    assert from_flat(parse_text(capsys.readouterr().out)).train.epochs == 7


def test_train_smoke_and_determinism(workspace, tmp_path):
    assert run_train(workspace, tmp_path / "a") == 0
    assert run_train(workspace, tmp_path / "b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    echoed = from_flat(parse_text((a / "config.txt").read_text()))
    assert echoed.model.class_names == ("blobs", "checkers", "stripes") and echoed.train.epochs == 2
    assert sorted(p.name for p in (a / "checkpoints").iterdir()) == ["epoch_001.evmf", "epoch_002.evmf"]
    for name in ("metrics.csv", "model.evmf", "checkpoints/epoch_002.evmf"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sub_override_beats_config_file(workspace, tmp_path):
    assert run_train(workspace, tmp_path, "DU", "--set", "train.epochs=1") == 0
    assert len(read_metric_log(tmp_path / "metrics.csv")) == 1


def read_metric_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_resume_continues(workspace, tmp_path):
    assert run_train(workspace, tmp_path / "r", "DU", "--set", "train.epochs=1") == 0
    assert run_train(workspace, tmp_path / "r", "DU", "--resume") == 0
    assert run_train(workspace, tmp_path / "s", "DU") == 0
    assert (tmp_path / "r" / "metrics.csv").read_bytes() == (tmp_path / "s" / "metrics.csv").read_bytes()


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "duhf"
    assert run_train(workspace, out) == 0
    return out / "model.evmf"


def test_explain_writes_artifacts(workspace, trained, tmp_path, capsys):
    image = workspace / "data" / "blobs" / "blobs_000.pgm"
    assert main(["explain", "--checkpoint", str(trained), "--image", str(image), "--out", str(tmp_path / "x")]) == 0
    assert "prediction:" in capsys.readouterr().out
    manifest = (tmp_path / "x" / "manifest.txt").read_text()
    assert manifest.count("\n") == 17 and "se_scores: se_scores.csv" in manifest
    assert (tmp_path / "x" / "config.txt").exists()
    assert main(["explain", "--checkpoint", str(trained), "--image", str(image), "--out", str(tmp_path / "y")]) == 0
    for f in (tmp_path / "x").iterdir():
        assert f.read_bytes() == (tmp_path / "y" / f.name).read_bytes()


def test_explain_du_has_no_se(workspace, tmp_path):
    assert run_train(workspace, tmp_path / "du", "DU", "--set", "train.epochs=1") == 0
    image = workspace / "data" / "stripes" / "stripes_001.pgm"
    assert main(["explain", "--checkpoint", str(tmp_path / "du" / "model.evmf"), "--image", str(image),
                 "--out", str(tmp_path / "x")]) == 0
    assert not (tmp_path / "x" / "se_scores.csv").exists()
    assert (tmp_path / "x" / "dense_delta_fwd.pgm").exists()


def test_checkpoint_errors_exit_4(workspace, trained, tmp_path):
    image = str(workspace / "data" / "blobs" / "blobs_000.pgm")
    other = tmp_path / "other.txt"
    other.write_text("model.d_model_fusion = 4\n")
    assert main(["explain", "--checkpoint", str(trained), "--image", image, "--out", str(tmp_path),
                 "--config", str(other)]) == 4
    assert main(["explain", "--checkpoint", str(tmp_path / "missing.evmf"), "--image", image,
                 "--out", str(tmp_path)]) == 4
    junk = tmp_path / "junk.evmf"
    junk.write_bytes(b"garbage")
    assert main(["explain", "--checkpoint", str(junk), "--image", image, "--out", str(tmp_path)]) == 4


def test_explain_bad_image_exit_3(trained, tmp_path):
    bad = tmp_path / "x.png"
    bad.write_bytes(b"nope")
    assert main(["explain", "--checkpoint", str(trained), "--image", str(bad), "--out", str(tmp_path)]) == 3


def test_ablate_subset_matches_individual_eval(workspace, tmp_path):
    out = tmp_path / "abl"
    argv = ["ablate", "--data", str(workspace / "data"), "--variants", "DUHF,DU", "--out", str(out),
            "--config", str(workspace / "tiny.txt")]
    assert main(argv) == 0
    rows = read_metric_table(out / "ablation.csv")
    assert [r["variant"] for r in rows] == ["DUHF", "DU"]
    for row in rows:
        ev = tmp_path / f"eval_{row['variant']}"
        assert main(["eval", "--checkpoint", str(out / row["variant"] / "model.evmf"),
                     "--data", str(workspace / "data"), "--out", str(ev)]) == 0
        single = read_metric_table(ev / "eval.csv")[0]
        assert {k: v for k, v in single.items() if k != "variant"} == {k: v for k, v in row.items() if k != "variant"}


def test_gradcheck_pass_and_corrupt(capsys):
    assert main(["gradcheck", "--blocks", "se,gru"]) == 0
    out = capsys.readouterr().out
    assert "se " in out and "gru " in out
    assert main(["gradcheck", "--blocks", "se,gru", "--corrupt", "gru"]) == 1
    assert "gru" in capsys.readouterr().err
    assert main(["gradcheck", "--blocks", "nope"]) == 2


def test_reported_error_matches_direct_grad_check():
    result = gradsuite.run_case("mha")
    with using(precision="float64"):
        loss, params = gradsuite.case_mha(lambda t: t)
        direct = grad_check(loss, params, max_coords=24)
    assert result.worst == direct
