import argparse
import logging

import pytest

from abpsim import cli
from abpsim.runner import run_matrix


@pytest.fixture
def small_file(tmp_path, small_text):
    p = tmp_path / "two_cells.toml"
    p.write_text(small_text)
    return p


def test_parse_seeds():
    assert cli.parse_seeds("3") == (1, 2, 3)
    assert cli.parse_seeds("4,7,9") == (4, 7, 9)
    assert cli.parse_seeds("5-8") == (5, 6, 7, 8)
    for bad in ("0", "x", "", "9-3"):
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_seeds(bad)


def test_run_writes_expected_files(tmp_path, small_file, capsys):
    out = tmp_path / "out"
    rc = cli.main(["run", "--scenario", str(small_file), "--protocol", "all",
                   "--seeds", "2", "--out", str(out)])
    assert rc == 0
    names = sorted(p.name for p in out.iterdir())
    assert len([n for n in names if n.endswith(".csv") and "_seed" in n]) == 6
    assert len([n for n in names if n.endswith("_summary.csv")]) == 3
    assert len([n for n in names if n.endswith(".log")]) == 6
    assert "downtime_bars.dat" in names
    table = capsys.readouterr().out
    assert "abps" in table and "lisp" in table


def test_runs_are_byte_identical(tmp_path, small_config):
    a = run_matrix(small_config, ["abps", "lisp"], [1], tmp_path / "a")
    b = run_matrix(small_config, ["lisp", "abps"], [1], tmp_path / "b")
    assert not a.failures and not b.failures
    for f in a.files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_parallel_matches_serial(tmp_path, small_config):
    a = run_matrix(small_config, ["mipv6"], [1, 2], tmp_path / "a", jobs=1)
    b = run_matrix(small_config, ["mipv6"], [1, 2], tmp_path / "b", jobs=2)
    for f in a.files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_empty_protocol_list_warns(tmp_path, small_config, caplog):
    with caplog.at_level(logging.WARNING):
        res = run_matrix(small_config, [], [1], tmp_path / "none")
    assert res.files == [] and "empty protocol list" in caplog.text
    assert not (tmp_path / "none").exists()


def test_out_dir_from_environment(tmp_path, small_file, monkeypatch):
    monkeypatch.setenv("ABPSIM_OUT", str(tmp_path / "env"))
    assert cli.main(["run", "--scenario", str(small_file), "--protocol", "lisp",
                     "--seeds", "1"]) == 0
    assert (tmp_path / "env" / "lisp_seed001.csv").exists()


def test_validate(small_file, capsys):
    assert cli.main(["validate", "--scenario", str(small_file)]) == 0
    out = capsys.readouterr().out
    assert "2 access points" in out and "a: [" in out


def test_validate_bundled_shows_gap(capsys):
    assert cli.main(["validate"]) == 0
    assert "coverage gap" in capsys.readouterr().out


def test_bad_scenario_exit_code(tmp_path, small_text, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(small_text.replace("speed", "spead"))
    assert cli.main(["validate", "--scenario", str(p)]) == 2
    assert "spead: unknown key" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path, capsys):
    assert cli.main(["validate", "--scenario", str(tmp_path / "nope.toml")]) == 1


def test_oracle_round_trip(tmp_path, small_file, capsys):
    out = tmp_path / "out"
    cli.main(["run", "--scenario", str(small_file), "--protocol", "abps",
              "--seeds", "1", "--out", str(out)])
    capsys.readouterr()
    log, csv = out / "abps_seed001.log", out / "abps_seed001.csv"
    assert cli.main(["oracle", "--log", str(log), "--csv", str(csv)]) == 0
    assert capsys.readouterr().out == csv.read_text()
    # a tampered CSV is caught
    lines = csv.read_text().splitlines()
    lines[1] = lines[1].replace(",0\n", ",1\n")[:-1] + "1"
    csv.write_text("\n".join(lines) + "\n")
    assert cli.main(["oracle", "--log", str(log), "--csv", str(csv)]) == 1


def test_oracle_malformed_log(tmp_path, capsys):
    p = tmp_path / "broken.log"
    p.write_text("time_us,entity,kind,detail\nnot,a,log\n")
    assert cli.main(["oracle", "--log", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_report(tmp_path, small_file, capsys):
    out = tmp_path / "out"
    cli.main(["run", "--scenario", str(small_file), "--seeds", "2", "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["report", "--in", str(out)]) == 0
    text = capsys.readouterr().out
    header = text.splitlines()[1]
    assert header.index("abps") < header.index("mipv6") < header.index("lisp")
    assert cli.main(["report", "--in", str(tmp_path)]) == 1


def test_broadcast_command(capsys):
    assert cli.main(["broadcast", "--origin", "0"]) == 0
    out = capsys.readouterr().out
    assert "delivered" in out and out.strip().endswith("ap1")


def test_broadcast_without_adhoc(small_file, capsys):
    assert cli.main(["broadcast", "--scenario", str(small_file)]) == 1
