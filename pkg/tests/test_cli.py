import json
import subprocess
import sys

import pytest

from logicloss.cli import build_parser, run

SUBCOMMANDS = ("compile", "eval", "grad-check", "gen-data", "batch", "train", "predict", "evaluate")


def lines(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    assert "usage: logicloss " + cmd in capsys.readouterr().out


def test_usage_errors():
    assert run([]) == 2
    assert run(["nope"]) == 2
    assert run(["compile", "--semantics", "zadeh"]) == 2
    assert run(["evaluate", "--pred", "x"]) == 2


def test_data_errors(tmp_path, capsys):
    assert run(["evaluate", "--pred", str(tmp_path / "missing.jsonl"), "--gold", str(tmp_path / "g.jsonl")]) == 1
    assert "error" in capsys.readouterr().err
    assert run(["compile", "--formula", "forall x: bogus(x)"]) == 1
    assert run(["compile", "--semantics", "godel"]) == 1
    assert run(["compile", "--semantics", "ss"]) == 1  # needs --lambda
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run(["batch", "--input", str(bad), "--out", str(tmp_path / "b.jsonl")]) == 1


def test_compile(capsys):
    assert run(["compile", "--formula", "forall x: ans(x)", "--samples", "2"]) == 0
    (out,) = lines(capsys)
    assert out["loss"] == "(add (neg (log (max ans[0] 1e-12))) (neg (log (max ans[1] 1e-12))))"
    assert run(["compile", "--pair-loss", "--semantics", "lukasiewicz", "--max-len", "60"]) == 0
    rows = lines(capsys)
    assert rows[-1]["rule"] == "pair_loss" and len(rows) == 46
    assert all(len(r["loss"]) <= 60 for r in rows)


def test_eval(tmp_path, capsys):
    binding = tmp_path / "b.json"
    binding.write_text(json.dumps({"samples": [
        {"answer_probs": [0.5, 0.5], "task_probs": {"queryGlobal": 1.0}, "gold_answer": 0, "gold_task": "queryGlobal"},
        {"answer_probs": [0.5, 0.5], "task_probs": {"queryGlobal": 1.0}, "gold_answer": 1, "gold_task": "queryGlobal"},
    ]}))
    assert run(["eval", "--formula", "forall x: ans(x)", "--binding", str(binding)]) == 0
    (out,) = lines(capsys)
    assert out["truth"] == pytest.approx(0.25) and out["loss"] == pytest.approx(1.386294, abs=1e-6)
    assert run(["eval", "--formula", "forall x: ~ans(x)", "--binding", str(binding)]) == 0
    assert lines(capsys)[0]["loss"] is None
    assert run(["eval", "--semantics", "godel", "--formula", "forall x: ans(x)", "--binding", str(binding)]) == 0
    assert "loss" not in lines(capsys)[0]


def test_grad_check(capsys):
    assert run(["grad-check", "--points", "5", "--seed", "1"]) == 0
    (out,) = lines(capsys)
    assert out["points"] == out["passed"] == 5 and out["worst"]["passed"]


def test_env_defaults_and_precedence(monkeypatch, capsys):
    monkeypatch.setenv("LOGICLOSS_SEMANTICS", "lukasiewicz")
    assert run(["compile", "--formula", "forall x: ans(x)", "--samples", "1"]) == 0
    assert lines(capsys)[0]["loss"] == "(min 1.0 (sub 1.0 ans[0]))"
    assert run(["compile", "--formula", "forall x: ans(x)", "--samples", "1", "--semantics", "product"]) == 0
    assert "log" in lines(capsys)[0]["loss"]
    monkeypatch.setenv("LOGICLOSS_SAMPLES", "3")
    assert run(["compile", "--formula", "forall x: ans(x)"]) == 0
    assert len(lines(capsys)[0]["inputs"]) == 3


def test_pipeline(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    assert run(["gen-data", "--images", "30", "--seed", "3", "--out", str(data)]) == 0
    assert lines(capsys)[0]["records"] > 100
    assert run(["batch", "--input", str(data), "--out", str(tmp_path / "b.jsonl"), "--seed", "2"]) == 0
    stats = lines(capsys)[0]
    assert stats["n_samples"] == 16 * stats["n_batches"]
    run_dir = tmp_path / "run"
    assert run(["train", "--data", str(data), "--mode", "logic", "--epochs", "2", "--lr", "1e-3",
                "--out-dir", str(run_dir)]) == 0
    assert lines(capsys)[0]["final"]["epoch"] == 2
    assert (run_dir / "curves.csv").exists()
    pred = tmp_path / "p.jsonl"
    assert run(["predict", "--model", str(run_dir / "model.json"), "--input", str(data), "--out", str(pred)]) == 0
    capsys.readouterr()
    report = tmp_path / "r.json"
    assert run(["evaluate", "--pred", str(pred), "--gold", str(data), "--label", "Logic", "--json", str(report)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split() == ["Metric", "Logic"]
    assert 0.0 <= json.loads(report.read_text())["accuracy"] <= 1.0


def test_entry_point():
    out = subprocess.run([sys.executable, "-m", "logicloss.cli", "compile", "--formula", "forall x: ans(x)",
                          "--samples", "1"], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["rule"] == "formula"
    bad = subprocess.run([sys.executable, "-m", "logicloss.cli", "train"], capture_output=True, text=True)
    assert bad.returncode == 2


def test_parser_lists_all_commands():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert tuple(sub.choices) == SUBCOMMANDS
