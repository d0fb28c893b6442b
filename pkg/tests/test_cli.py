import argparse
import subprocess
import sys

import pytest

from lqot.cli import build_parser, main
from lqot.kg import synthetic_kg, write_triples


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    kg = synthetic_kg(n_entities=30, n_relations=3, n_edges=90, n_clusters=5, seed=3)
    write_triples(tmp_path / "g.tsv", kg.vocab, kg.triples)
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(*argv):
    return main(list(argv))


def test_every_flag_has_help():
    parser = build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    assert set(sub.choices) == {"split", "train", "build-adj", "gen-queries", "query", "eval"}
    for name, p in sub.choices.items():
        for action in p._actions:
            assert action.help, f"{name} {action.option_strings} lacks help"


def test_pipeline(workspace, capsys):
    assert run("split", "--kg", "g.tsv", "--keep", "0.5", "--seed", "7",
               "--out", "train.tsv", "--removed", "removed.tsv") == 0
    kept = (workspace / "train.tsv").read_text().splitlines()
    removed = (workspace / "removed.tsv").read_text().splitlines()
    assert len(kept) == 45 and len(removed) == 45
    assert run("train", "--kg", "g.tsv", "--train", "train.tsv", "--out", "m.bin",
               "--dim", "8", "--epochs", "5", "--lr", "1") == 0
    assert run("build-adj", "--kg", "g.tsv", "--train", "train.tsv", "--model", "m.bin",
               "--out", "adj", "--top-k", "5") == 0
    assert len(list((workspace / "adj").glob("*.adj"))) == 3
    capsys.readouterr()
    assert run("query", "--kg", "g.tsv", "--adj", "adj", "--q", '(p r1 "e0")', "--top", "4") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("# theta=0.5 alpha=0.9")
    assert len(out) == 5 and out[1].startswith("1\t")
    assert run("gen-queries", "--kg", "g.tsv", "--count", "2", "--shapes", "1p,pin",
               "--out", "w.tsv") == 0
    assert len((workspace / "w.tsv").read_text().splitlines()) == 4


def test_eval_writes_table_and_csv(workspace, capsys):
    (workspace / "exp.cfg").write_text(
        "triples_path = g.tsv\nper_shape_count = 2\nadjacency = boolean\nkeep_fraction = 1.0\n")
    assert run("eval", "--config", "exp.cfg", "--threads", "2") == 0
    out = capsys.readouterr().out
    assert "overall" in out and "delta=0.0001" in out
    assert (workspace / "exp.csv").read_text().startswith("shape,k,hits,total,rate")


def test_usage_errors_exit_1(workspace, capsys):
    with pytest.raises(SystemExit) as err:
        run("query", "--kg", "missing.tsv", "--adj", ".", "--q", '"e0"')
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        run("split", "--bogus")
    assert err.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_2(workspace, capsys):
    (workspace / "adj").mkdir()
    assert run("query", "--kg", "g.tsv", "--adj", "adj", "--q", '(p nope "e0")') == 2
    assert "unknown relation" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lqot", "split", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "--removed" in proc.stdout
