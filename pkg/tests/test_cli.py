import json

import numpy as np
import pytest

from sfrgnn.cli import main
from sfrgnn.graph import write_graph
from sfrgnn.synth import sbm_graph


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "sbm"
    g = sbm_graph([20, 20], p_in=0.4, p_out=0.05, seed=2, feature_dim=6,
                  train_ratio=0.3, val_ratio=0.2)
    write_graph(g, d)
    return d


def test_train_writes_report_and_exits_zero(dataset, tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = main([
        "train", "--dataset", str(dataset), "--variant", "sfr",
        "--repeats", "2", "--seed", "1",
        "--pretrain-epochs", "15", "--finetune-epochs", "4",
        "--out", str(out), "--format", "json",
    ])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert len(payload["trials"]) == 2
    assert payload["spec"]["variants"] == ["sfr"]
    assert "clean" in capsys.readouterr().out


def test_attack_then_external_train(dataset, tmp_path):
    plan = tmp_path / "plan.tsv"
    assert main([
        "attack", "--dataset", str(dataset), "--method", "dice",
        "--ptb", "0.2", "--seed", "3", "--out", str(plan),
    ]) == 0
    assert plan.read_text().startswith("# budget=")
    out = tmp_path / "ext.json"
    rc = main([
        "train", "--dataset", str(dataset), "--variant", "gcn",
        "--attack", "external", "--plan", str(plan),
        "--repeats", "1", "--seed", "4",
        "--pretrain-epochs", "10", "--finetune-epochs", "2",
        "--out", str(out), "--format", "json",
    ])
    assert rc == 0


def test_bench_and_paired_effect(dataset, tmp_path):
    out = tmp_path / "timing.json"
    rc = main([
        "bench", "--dataset", str(dataset), "--variants", "sfr,mlp",
        "--repeats", "1", "--out", str(out),
    ])
    assert rc == 0
    rows = json.loads(out.read_text())["rows"]
    assert {r["variant"] for r in rows} == {"sfr", "mlp"}

    pe_out = tmp_path / "pe.json"
    rc = main([
        "paired-effect", "--dataset", str(dataset), "--ptb", "0.1",
        "--repeats", "1", "--seed", "5", "--out", str(pe_out),
    ])
    assert rc == 0
    assert "median_difference" in json.loads(pe_out.read_text())


def test_check_grad_exit_zero():
    assert main(["check-grad", "--seed", "2"]) == 0


def test_validation_error_exits_one(tmp_path, capsys):
    rc = main([
        "train", "--dataset", str(tmp_path / "nope"), "--variant", "sfr",
        "--repeats", "1", "--seed", "0", "--out", str(tmp_path / "x.json"),
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.filterwarnings("ignore:invalid value")
def test_numeric_error_exits_two(dataset, tmp_path, capsys):
    rc = main([
        "train", "--dataset", str(dataset), "--variant", "mlp",
        "--repeats", "1", "--seed", "0", "--lr", "1e30",
        "--pretrain-epochs", "5", "--finetune-epochs", "0",
        "--out", str(tmp_path / "x.json"),
    ])
    assert rc == 2
    err = capsys.readouterr().err
    assert "variant=mlp" in err  # module errors carry (variant, repeat) context


def test_capacity_error_exits_three(dataset, tmp_path, monkeypatch, capsys):
    import sfrgnn.attacks as attacks_mod

    monkeypatch.setattr(attacks_mod, "GRAD_ATTACK_NODE_CAP", 10)
    rc = main([
        "attack", "--dataset", str(dataset), "--method", "grad",
        "--ptb", "0.1", "--seed", "0", "--out", str(tmp_path / "p.tsv"),
    ])
    assert rc == 3
