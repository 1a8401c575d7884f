import csv
import json
import shutil

import pytest

from archevo.cli import main as cli_main
from archevo.knowledge import KnowledgeDB, load_default_tree

from conftest import CORPUS, DEMO
from test_knowledge import CORPUS_SCRIPT


def write_script(path, script):
    with open(path, "w", encoding="utf-8") as f:
        for (stream, seq), response in script.items():
            f.write(json.dumps(
                {"stream": stream, "seq": seq, "response": response}
            ) + "\n")


def scripted_config(tmp_path, script, name="cfg.toml"):
    script_path = tmp_path / "script.jsonl"
    write_script(script_path, script)
    cfg = tmp_path / name
    cfg.write_text(
        f'[gateway]\nmode = "scripted"\nscript = "{script_path.name}"\n',
        encoding="utf-8",
    )
    return cfg


# --- search ---


def test_search_fresh_run_output(tmp_path, capsys):
    out = tmp_path / "run"
    rc = cli_main(["search", "--config", str(DEMO / "config.toml"), "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "best: c00077" in text
    assert "val_accuracy: 75.8042" in text
    assert "test_accuracy: 75.5042" in text
    assert "params: " in text and "(cap 1.5e+06)" in text
    assert "history: 80 entries, 1 failed attempts" in text


def test_search_refuses_existing_run(demo_run_dir, capsys):
    rc = cli_main(
        ["search", "--config", str(DEMO / "config.toml"), "--out", str(demo_run_dir)]
    )
    assert rc == 1
    assert "--resume or --force" in capsys.readouterr().err


def test_search_resume_finished_run_is_noop(demo_run_dir, capsys):
    before = (demo_run_dir / "history.jsonl").read_bytes()
    rc = cli_main(
        ["search", "--config", str(DEMO / "config.toml"),
         "--out", str(demo_run_dir), "--resume"]
    )
    assert rc == 0
    assert "already finished" in capsys.readouterr().out
    assert (demo_run_dir / "history.jsonl").read_bytes() == before


def test_search_resume_without_run_dir(tmp_path, capsys):
    rc = cli_main(
        ["search", "--config", str(DEMO / "config.toml"),
         "--out", str(tmp_path / "missing"), "--resume"]
    )
    assert rc == 1
    assert "nothing to resume" in capsys.readouterr().err


def test_search_resume_completes_crashed_run(tmp_path, demo_run_dir, capsys):
    crashed = tmp_path / "crashed"
    shutil.copytree(demo_run_dir, crashed)
    shutil.rmtree(crashed / "report", ignore_errors=True)
    recs = [json.loads(l) for l in (crashed / "history.jsonl").open()]
    kept = [r for r in recs if r["generation"] <= 1]
    with open(crashed / "history.jsonl", "w") as f:
        for r in kept:
            f.write(json.dumps(r) + "\n")
    (crashed / "state.json").write_text(
        '{"completed_generations": 1, "finished": false}\n'
    )
    rc = cli_main(
        ["search", "--config", str(DEMO / "config.toml"),
         "--out", str(crashed), "--resume"]
    )
    assert rc == 0
    assert (crashed / "history.jsonl").read_bytes() == (
        demo_run_dir / "history.jsonl"
    ).read_bytes()


def test_search_force_overwrites(tmp_path, demo_run_dir):
    target = tmp_path / "run"
    shutil.copytree(demo_run_dir, target)
    rc = cli_main(
        ["search", "--config", str(DEMO / "config.toml"),
         "--out", str(target), "--force"]
    )
    assert rc == 0
    assert (target / "history.jsonl").read_bytes() == (
        demo_run_dir / "history.jsonl"
    ).read_bytes()


def test_search_missing_config_exits_1(tmp_path, capsys):
    rc = cli_main(
        ["search", "--config", str(tmp_path / "absent.toml"),
         "--out", str(tmp_path / "run")]
    )
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err


def test_search_config_without_ideas_exits_1(tmp_path, capsys):
    cfg = scripted_config(tmp_path, {})
    rc = cli_main(["search", "--config", str(cfg), "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "knowledge.ideas" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as exc_info:
        cli_main(["search", "--out", str(tmp_path / "run")])  # missing --config
    assert exc_info.value.code == 1
    with pytest.raises(SystemExit) as exc_info:
        cli_main(["no-such-command"])
    assert exc_info.value.code == 1


# --- validate ---


def test_validate_passing_source(capsys):
    rc = cli_main(
        ["validate", str(DEMO / "base_model.py"),
         "--config", str(DEMO / "config.toml")]
    )
    assert rc == 0
    out = capsys.readouterr().out
    lines = out.strip().split("\n")
    assert lines[0].startswith("execution") and "pass" in lines[0]
    assert lines[1].startswith("budget") and "pass" in lines[1]
    assert "params=32768" in lines[1]
    assert lines[2].startswith("structural") and "skipped" in lines[2]
    assert "no --parent given" in lines[2]


def test_validate_over_budget_source(tmp_path, capsys):
    src = tmp_path / "big.py"
    src.write_text("#SURROGATE depth=6 width=64 tags=\nclass Network: pass\n")
    rc = cli_main(
        ["validate", str(src), "--config", str(DEMO / "config.toml")]
    )
    assert rc == 0
    out = capsys.readouterr().out
    budget_line = [l for l in out.split("\n") if l.startswith("budget")][0]
    assert "fail" in budget_line
    assert "params=1.57286e+06 > 1.5e+06" in budget_line


def test_validate_uncompilable_source(tmp_path, capsys):
    src = tmp_path / "bad.py"
    src.write_text("class Network: pass\n")
    rc = cli_main(["validate", str(src), "--config", str(DEMO / "config.toml")])
    assert rc == 0
    out = capsys.readouterr().out
    exec_line = [l for l in out.split("\n") if l.startswith("execution")][0]
    assert "fail" in exec_line
    assert "missing surrogate descriptor" in exec_line
    # the budget row is withheld when compilation failed
    assert not any(l.startswith("budget") for l in out.split("\n"))


def test_validate_structural_with_parent(tmp_path, capsys):
    cfg = scripted_config(tmp_path, {("validate.0", 0): "##response## yes"})
    child = tmp_path / "child.py"
    child.write_text("#SURROGATE depth=3 width=16 tags=attn\nclass Network: pass\n")
    parent = tmp_path / "parent.py"
    parent.write_text("#SURROGATE depth=2 width=16 tags=\nclass Network: pass\n")
    rc = cli_main(
        ["validate", str(child), "--config", str(cfg),
         "--parent", str(parent), "--out", str(tmp_path)]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert any(l.startswith("structural") and "pass" in l for l in out.split("\n"))


# --- extract ---


def test_extract_fixture_corpus(tmp_path, capsys):
    cfg = scripted_config(tmp_path, CORPUS_SCRIPT)
    out = tmp_path / "kb"
    rc = cli_main(
        ["extract", "--corpus", str(CORPUS), "--config", str(cfg), "--out", str(out)]
    )
    assert rc == 0
    text = capsys.readouterr().out
    assert "papers: 9 scanned, 7 kept, 1 filtered, 1 unparsable" in text
    assert "ideas: 12 added, 1 duplicates, 1 truncated" in text
    stats = json.loads((out / "stats.json").read_text())
    assert stats["papers"] == 9
    assert stats["ideas_added"] == 12
    assert stats["unreadable_files"] == 1
    db = KnowledgeDB.load(out / "ideas.jsonl", load_default_tree())
    assert len(db) == 12
    assert (out / "transcript.jsonl").is_file()


def test_extract_refuses_overwrite(tmp_path, capsys):
    cfg = scripted_config(tmp_path, CORPUS_SCRIPT)
    out = tmp_path / "kb"
    assert cli_main(
        ["extract", "--corpus", str(CORPUS), "--config", str(cfg), "--out", str(out)]
    ) == 0
    capsys.readouterr()
    rc = cli_main(
        ["extract", "--corpus", str(CORPUS), "--config", str(cfg), "--out", str(out)]
    )
    assert rc == 1
    assert "--force" in capsys.readouterr().err


def test_extract_empty_database_exits_2(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    (corpus / "only.txt").write_text(
        "Irrelevant Paper\n\n# ABSTRACT\nNothing here.\n# BODY\nStill nothing.\n"
    )
    cfg = scripted_config(tmp_path, {("paper.only", 0): "##response##no"})
    rc = cli_main(
        ["extract", "--corpus", str(corpus), "--config", str(cfg),
         "--out", str(tmp_path / "kb")]
    )
    assert rc == 2
    assert "0 added" in capsys.readouterr().out


# --- report ---


def test_report_demo_run(tmp_path, demo_run_dir, capsys):
    run = tmp_path / "run"
    shutil.copytree(demo_run_dir, run)
    shutil.rmtree(run / "report", ignore_errors=True)
    rc = cli_main(["report", str(run)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "accuracy.csv: 80 rows" in text

    with open(run / "report" / "accuracy.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 80
    assert rows[0]["id"] == "c00000"
    assert set(rows[0]) == {
        "index", "id", "stage", "generation", "slot", "step",
        "val_accuracy", "test_accuracy", "params", "flops",
    }

    with open(run / "report" / "pass_rates.csv") as f:
        by_phase = {r["phase"]: r for r in csv.DictReader(f)}
    assert by_phase["execution"]["pass_rate"] == "1.0000"
    assert by_phase["budget"] == {
        "phase": "budget", "attempts": "81", "failures": "1", "pass_rate": "0.9877",
    }
    assert by_phase["structural"]["attempts"] == "80"
    assert by_phase["overall"]["pass_rate"] == "0.9877"

    with open(run / "report" / "pareto.csv") as f:
        front = list(csv.DictReader(f))
    assert front
    # every front member must be in history and no member dominated by another
    accs = [float(r["val_accuracy"]) for r in front]
    params = [float(r["params"]) for r in front]
    for i in range(len(front)):
        for j in range(len(front)):
            if i == j:
                continue
            assert not (
                accs[j] >= accs[i] and params[j] <= params[i]
                and (accs[j] > accs[i] or params[j] < params[i])
                and float(front[j]["flops"]) <= float(front[i]["flops"])
            )

    png = run / "report" / "progress.png"
    assert png.is_file() and png.stat().st_size > 1000


def test_report_refuses_overwrite(tmp_path, demo_run_dir, capsys):
    run = tmp_path / "run"
    shutil.copytree(demo_run_dir, run)
    shutil.rmtree(run / "report", ignore_errors=True)
    assert cli_main(["report", str(run)]) == 0
    capsys.readouterr()
    assert cli_main(["report", str(run)]) == 1
    assert "--force" in capsys.readouterr().err
    assert cli_main(["report", str(run), "--force"]) == 0


def test_report_non_run_dir(tmp_path, capsys):
    rc = cli_main(["report", str(tmp_path)])
    assert rc == 1
    assert "not a run directory" in capsys.readouterr().err


def test_report_empty_history_exits_2(tmp_path, capsys):
    run = tmp_path / "run"
    run.mkdir()
    (run / "state.json").write_text('{"completed_generations": 0, "finished": false}')
    (run / "history.jsonl").write_text("")
    (run / "config.json").write_text("{}")
    rc = cli_main(["report", str(run)])
    assert rc == 2
    assert "history is empty" in capsys.readouterr().err


def test_report_corrupt_history_exits_2(tmp_path, demo_run_dir, capsys):
    run = tmp_path / "run"
    shutil.copytree(demo_run_dir, run)
    shutil.rmtree(run / "report", ignore_errors=True)
    lines = (run / "history.jsonl").read_text().strip().split("\n")
    lines[6] = '{"broken'
    (run / "history.jsonl").write_text("\n".join(lines) + "\n")
    rc = cli_main(["report", str(run)])
    assert rc == 2
    assert "history.jsonl:7" in capsys.readouterr().err
