"""Tests for the command-line runner: argument handling, config-file
precedence, output files, and the exit-code contract (0 success, 2 flagged
nonconvergence, 1 error)."""

import os

from polyhho.bench import CSV_COLUMNS
from polyhho.cli import main


def test_proptest_passes_and_prints_lines(capsys):
    code = main(["proptest", "--k", "0", "--families", "cartesian"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS") == 5
    assert "FAIL" not in out
    assert "5/5 checks passed" in out


def test_kovasznay_writes_pinned_csv(tmp_path, capsys):
    code = main(["kovasznay", "--k", "0", "--levels", "1", "--base", "2",
                 "--out", str(tmp_path)])
    assert code == 0
    csv_path = tmp_path / "kovasznay.csv"
    dat_path = tmp_path / "kovasznay.dat"
    assert os.path.exists(csv_path) and os.path.exists(dat_path)
    with open(csv_path) as fh:
        lines = fh.read().strip().split("\n")
    assert lines[0] == CSV_COLUMNS
    assert len(lines) == 2
    out = capsys.readouterr().out
    assert "wrote" in out and "N_dof" in out


def test_flagged_run_exits_two(capsys):
    code = main(["kovasznay", "--k", "0", "--levels", "1", "--base", "2",
                 "--max-iter", "1"])
    assert code == 2
    assert "flagged" in capsys.readouterr().out


def test_usage_error_exits_one(capsys):
    assert main(["kovasznay", "--family", "bogus"]) == 1
    assert main(["no-such-command"]) == 1


def test_runtime_error_exits_one(capsys):
    code = main(["cavity", "--lambda", "1", "--psi", "nope",
                 "--k", "0", "--n", "2"])
    assert code == 1
    assert "unknown potential" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["cavity", "--help"]) == 0


def test_config_file_fills_defaults_but_flags_win(tmp_path, capsys):
    cfg = tmp_path / "solver.cfg"
    cfg.write_text("# study config\nk = 0\n")
    # config supplies k=0: the coarsest Kovasznay mesh has 28 dofs
    code = main(["kovasznay", "--levels", "1", "--base", "2",
                 "--config", str(cfg)])
    assert code == 0
    assert " 28 " in capsys.readouterr().out
    # an explicit --k 1 beats the config entry (52 dofs)
    code = main(["kovasznay", "--levels", "1", "--base", "2",
                 "--config", str(cfg), "--k", "1"])
    assert code == 0
    assert " 52 " in capsys.readouterr().out


def test_cavity_prints_profiles_and_saves(tmp_path, capsys):
    code = main(["cavity", "--re", "10", "--k", "0", "--n", "4",
                 "--samples", "11", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "converged" in out and "u1 range" in out
    assert os.path.exists(tmp_path / "cavity_u1.dat")
    assert os.path.exists(tmp_path / "cavity_u2.dat")


def test_cavity_stages_flag(capsys):
    code = main(["cavity", "--re", "30", "--k", "0", "--n", "4",
                 "--stages", "5,15"])
    assert code == 0
    assert "converged" in capsys.readouterr().out
