import json
from pathlib import Path

import pytest

from app.cli import build_parser, main

SMALL = ["--n", "1", "--N", "4", "--M", "4", "--d", "1", "--samples", "0.9,1.0"]


def read_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_normalize(capsys):
    assert main(["normalize", "z2*z1", "--n", "2"]) == 0
    assert capsys.readouterr().out == "q*z1*z2\n"


def test_syntax_error_exit_code(capsys):
    assert main(["normalize", "z1 +* z2", "--n", "2"]) == 2
    assert "EXPRESSION_SYNTAX" in capsys.readouterr().err


def test_verify_writes_a_report(tmp_path, capsys):
    output = tmp_path / "report.jsonl"
    code = main(["verify", *SMALL, "--suites", "relations,spectrum", "--output", str(output)])
    assert code == 0
    lines = read_lines(output)
    assert lines and all(line["schema"] == "qplane.report/1" for line in lines)
    assert {line["suite"] for line in lines} == {"relations", "spectrum"}
    assert capsys.readouterr().err.splitlines()[-1].startswith("PASS")


def test_verify_without_margin_flags_the_boundary(tmp_path, capsys):
    output = tmp_path / "report.jsonl"
    code = main(["verify", *SMALL, "--d", "0", "--suites", "relations", "--output", str(output)])
    assert code == 1
    summary = capsys.readouterr().err
    assert "FAIL relations/" in summary
    assert summary.splitlines()[-1].startswith("FAIL")


def test_verify_from_config_file(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("n = 1\nN = 4\nM = 4\nd = 1\nsuites = equivalence\n")
    output = tmp_path / "out.jsonl"
    assert main(["verify", "--config", str(config), "--output", str(output)]) == 0
    assert [line["relation"] for line in read_lines(output)] == ["builders", "builders"]


def test_unknown_config_key(tmp_path, capsys):
    config = tmp_path / "run.cfg"
    config.write_text("colour = blue\n")
    assert main(["verify", "--config", str(config)]) == 2
    assert "CONFIG_ERROR" in capsys.readouterr().err


def test_sweep_size_below_two_is_a_usage_error(capsys):
    assert main(["norm", "--n", "1", "--sweep", "1,4"]) == 2
    assert "CONFIG_ERROR" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "absent.cfg")]) == 3


def test_rep_build(capsys):
    assert main(["rep-build", *SMALL, "--builder", "lattice"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [row["component"] for row in rows] == [0, 1]
    assert rows[1]["dim"] == 2 * 9


def test_export(tmp_path, capsys):
    out_dir = tmp_path / "mtx"
    assert main(["export", "z", *SMALL, "--component", "1", "--out-dir", str(out_dir)]) == 0
    printed = capsys.readouterr().out.split()
    assert [Path(p).name for p in printed] == ["z1_k1_N4_M4.mtx"]
    assert (out_dir / "z1_k1_N4_M4.mtx").exists()


def test_norm_with_terms(corpus_dir, tmp_path):
    output = tmp_path / "norms.jsonl"
    code = main(["norm", "--n", "2", "--sweep", "3,4", "--d", "1", "--samples", "0.9,1.0",
                 "--terms", str(corpus_dir / "norm_terms.jsonl"), "--output", str(output)])
    assert code == 0
    rows = read_lines(output)
    assert {row["term_id"] for row in rows} == {"decay", "bump", "shift1", "shift2", "point"}


def test_separate_with_family_file(corpus_dir, capsys):
    code = main(["separate", "--n", "3", "--pairs", "50", "--family", str(corpus_dir / "separation_family.jsonl")])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["family_size"] == 12
    assert report["unseparated"] == []


def test_confluence(capsys):
    assert main(["confluence", "--n", "1", "--max-len", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["confluent"] is True
    assert report["words_checked"] == 1 + 2 + 4 + 8


def test_subcommand_required():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
