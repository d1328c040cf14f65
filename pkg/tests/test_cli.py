"""End-to-end command-line workflows against synthetic data."""

import numpy as np
import pytest

from recscale.cli import main
from recscale.metrics import EvalReport


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared synth -> prepare -> train pipeline (small, a few seconds)."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--rule", "markov_items", "--users", "40",
                 "--items", "25", "--min-len", "5", "--max-len", "10",
                 "--seed", "3", "--out", str(d / "events.csv"),
                 "--truth-out", str(d / "truth.json")]) == 0
    assert main(["prepare", "--input", str(d / "events.csv"),
                 "--format", "canonical_csv", "--max-len", "8",
                 "--task", "recall", "--dataset", "synth-markov",
                 "--out", str(d / "cache.rslb")]) == 0
    (d / "train.cfg").write_text(
        "model.dim = 8\nmodel.blocks = 1\ntrain.epochs = 2\n"
        "train.batch_size = 16\ntrain.lr = 0.005\ntrain.seed = 1\n")
    assert main(["train", "--cache", str(d / "cache.rslb"),
                 "--config", str(d / "train.cfg"),
                 "--out", str(d / "model.rslb")]) == 0
    return d


def test_prepare_rerun_byte_identical(workdir, tmp_path):
    out = tmp_path / "cache2.rslb"
    assert main(["prepare", "--input", str(workdir / "events.csv"),
                 "--format", "canonical_csv", "--max-len", "8",
                 "--task", "recall", "--dataset", "synth-markov",
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (workdir / "cache.rslb").read_bytes()


def test_synth_deterministic(workdir, tmp_path):
    out = tmp_path / "again.csv"
    main(["synth", "--rule", "markov_items", "--users", "40", "--items", "25",
          "--min-len", "5", "--max-len", "10", "--seed", "3", "--out", str(out)])
    assert out.read_bytes() == (workdir / "events.csv").read_bytes()


def test_missing_required_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["prepare", "--input", "x.csv"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_unknown_config_key_suggests_and_exits_2(workdir, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model.dmi = 8\n")
    code = main(["train", "--cache", str(workdir / "cache.rslb"),
                 "--config", str(cfg), "--out", str(tmp_path / "m.rslb")])
    assert code == 2
    assert "model.dim" in capsys.readouterr().err


def test_missing_cache_exits_1(tmp_path, capsys):
    code = main(["train", "--cache", str(tmp_path / "nope.rslb"),
                 "--config", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "m.rslb")])
    assert code == 1
    capsys.readouterr()


def test_wrong_container_kind_exits_1(workdir, tmp_path, capsys):
    code = main(["evaluate", "--cache", str(workdir / "model.rslb"),
                 "--checkpoint", str(workdir / "model.rslb"),
                 "--report", str(tmp_path / "r.csv")])
    assert code == 1
    assert "cache" in capsys.readouterr().err


def test_evaluate_deterministic_rows(workdir, tmp_path, capsys):
    r1, r2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    for r in (r1, r2):
        assert main(["evaluate", "--cache", str(workdir / "cache.rslb"),
                     "--checkpoint", str(workdir / "model.rslb"),
                     "--report", str(r), "--variant", "base", "--seed", "1"]) == 0
    capsys.readouterr()
    assert r1.read_bytes() == r2.read_bytes()
    rows = EvalReport.read_csv(r1)
    metrics = {row[7] for row in rows}
    assert {"hr@10", "ndcg@10", "hr@50", "ndcg@50", "mrr"} <= metrics
    assert all(row[0] == "base" and row[6] == 1 for row in rows)


def test_zeroed_bias_equals_none_end_to_end(workdir, tmp_path, capsys):
    # untrained models: zero-initialized bias tables must match bias "none"
    reports = {}
    for bias in ("rel_pos_time", "none"):
        cfg = tmp_path / f"{bias}.cfg"
        cfg.write_text(f"model.dim = 8\nmodel.blocks = 1\nmodel.bias = {bias}\n"
                       "train.epochs = 0\n")
        ckpt = tmp_path / f"{bias}.rslb"
        assert main(["train", "--cache", str(workdir / "cache.rslb"),
                     "--config", str(cfg), "--out", str(ckpt)]) == 0
        rep = tmp_path / f"{bias}.csv"
        assert main(["evaluate", "--cache", str(workdir / "cache.rslb"),
                     "--checkpoint", str(ckpt), "--report", str(rep)]) == 0
        reports[bias] = [r[7:] for r in EvalReport.read_csv(rep)]
    capsys.readouterr()
    assert reports["rel_pos_time"] == reports["none"]


def test_sweep_grid_and_resume(workdir, tmp_path, capsys):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(
        "model.dim = 8\ntrain.epochs = 1\ntrain.batch_size = 16\n"
        "grid.blocks = 1,2\ngrid.bias = none,rope\n"
        "sweep.seeds = 1,2\nsweep.max_points = 8\n")
    report = tmp_path / "sweep.csv"
    args = ["sweep", "--cache", str(workdir / "cache.rslb"),
            "--config", str(cfg), "--report", str(report)]
    assert main(args) == 0
    done = capsys.readouterr().out.count("done ")
    assert done == 8
    rows = EvalReport.read_csv(report)
    pairs = {(r[0], r[6]) for r in rows}
    assert pairs == {(f"bias={b}|blocks={k}", s)
                     for b in ("none", "rope") for k in (1, 2) for s in (1, 2)}
    # rerun: everything already completed, nothing re-executed or re-appended
    assert main(args) == 0
    assert capsys.readouterr().out.count("done ") == 0
    assert EvalReport.read_csv(report) == rows


def test_sweep_budget_refused(workdir, tmp_path, capsys):
    cfg = tmp_path / "big.cfg"
    cfg.write_text("grid.blocks = 1,2,4\nsweep.seeds = 1,2,3\nsweep.max_points = 4\n")
    code = main(["sweep", "--cache", str(workdir / "cache.rslb"),
                 "--config", str(cfg), "--report", str(tmp_path / "r.csv")])
    assert code == 2
    assert "budget" in capsys.readouterr().err


def test_report_output(workdir, tmp_path, capsys):
    rep = tmp_path / "r.csv"
    assert main(["evaluate", "--cache", str(workdir / "cache.rslb"),
                 "--checkpoint", str(workdir / "model.rslb"),
                 "--report", str(rep)]) == 0
    capsys.readouterr()
    assert main(["report", "--csv", str(rep), "--reference"]) == 0
    out = capsys.readouterr().out
    assert "best grid points" in out
    assert "not comparable at desk scale" in out


def test_export_embeddings(workdir, tmp_path, capsys):
    e1, e2 = tmp_path / "e1.csv", tmp_path / "e2.csv"
    for e in (e1, e2):
        assert main(["export-embeddings", "--cache", str(workdir / "cache.rslb"),
                     "--checkpoint", str(workdir / "model.rslb"),
                     "--sample", "5", "--seed", "4", "--out", str(e)]) == 0
    capsys.readouterr()
    assert e1.read_bytes() == e2.read_bytes()
    lines = e1.read_text().splitlines()
    assert lines[0].startswith("user_id,dim_0,")
    assert len(lines) == 6


def test_export_embeddings_zero_sample(workdir, tmp_path, capsys):
    out = tmp_path / "none.csv"
    assert main(["export-embeddings", "--cache", str(workdir / "cache.rslb"),
                 "--checkpoint", str(workdir / "model.rslb"),
                 "--sample", "0", "--out", str(out)]) == 0
    capsys.readouterr()
    assert len(out.read_text().splitlines()) == 1  # header only


def test_export_embeddings_sample_too_large(workdir, tmp_path, capsys):
    code = main(["export-embeddings", "--cache", str(workdir / "cache.rslb"),
                 "--checkpoint", str(workdir / "model.rslb"),
                 "--sample", "9999", "--out", str(tmp_path / "x.csv")])
    assert code == 1
    assert "exceeds" in capsys.readouterr().err


def test_train_rerun_byte_identical_checkpoint(workdir, tmp_path, capsys):
    out = tmp_path / "model2.rslb"
    assert main(["train", "--cache", str(workdir / "cache.rslb"),
                 "--config", str(workdir / "train.cfg"), "--out", str(out)]) == 0
    capsys.readouterr()
    assert out.read_bytes() == (workdir / "model.rslb").read_bytes()


def test_ranking_pipeline(tmp_path, capsys):
    d = tmp_path
    assert main(["synth", "--rule", "logistic_ranking", "--users", "40",
                 "--items", "25", "--min-len", "5", "--max-len", "10",
                 "--seed", "2", "--out", str(d / "rk.csv")]) == 0
    assert main(["prepare", "--input", str(d / "rk.csv"), "--format",
                 "canonical_csv", "--max-len", "8", "--task", "ranking",
                 "--out", str(d / "rk.rslb")]) == 0
    (d / "rk.cfg").write_text("model.dim = 8\nmodel.blocks = 1\n"
                              "train.epochs = 1\ntrain.batch_size = 16\n")
    assert main(["train", "--cache", str(d / "rk.rslb"),
                 "--config", str(d / "rk.cfg"), "--out", str(d / "rk-model.rslb")]) == 0
    assert main(["evaluate", "--cache", str(d / "rk.rslb"),
                 "--checkpoint", str(d / "rk-model.rslb"),
                 "--report", str(d / "rk-report.csv")]) == 0
    capsys.readouterr()
    metrics = {r[7] for r in EvalReport.read_csv(d / "rk-report.csv")}
    assert metrics == {"auc", "logloss"}
