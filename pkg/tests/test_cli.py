"""Tests for the command-line runner: parsing, outputs, exit codes."""

import subprocess
import sys

import numpy as np
import pytest

from gcg.cli import RunConfig, build_parser, load_config_file, main, resolve_config

FAST = [
    "run",
    "--problem",
    "parabolic-ex-1d",
    "--n",
    "8",
    "--nt",
    "12",
    "--max-iter",
    "40",
]


def run_cli(argv):
    return main([str(a) for a in argv])


def test_list_names_every_problem(capsys):
    assert run_cli(["list"]) == 0
    out = capsys.readouterr().out
    for name in ("parabolic-ex", "parabolic-ex-1d", "stadler-ex1", "stadler-ex3"):
        assert name in out
    lines = [line.split()[0] for line in out.strip().splitlines()]
    assert lines == sorted(lines)
    assert "default n=64" in out and "default n=32" in out


def test_run_writes_all_outputs(tmp_path, capsys):
    code = run_cli(FAST + ["--out-dir", tmp_path])
    assert code == 0
    out = capsys.readouterr().out
    assert "iterations" in out and "final gap" in out
    assert (tmp_path / "history.csv").is_file()
    assert (tmp_path / "control.txt").is_file()
    assert (tmp_path / "diagnostics.txt").is_file()

    report = (tmp_path / "diagnostics.txt").read_text()
    for key in (
        "status = ",
        "iterations = ",
        "j_final = ",
        "gap_final = ",
        "L_est = ",
        "q_env = ",
        "time_sparsity_fraction = ",
    ):
        assert key in report


def test_history_csv_parses_back(tmp_path, capsys):
    run_cli(FAST + ["--out-dir", tmp_path])
    stdout = capsys.readouterr().out
    iterations = int(stdout.split(" after ")[1].split(" ")[0])
    lines = (tmp_path / "history.csv").read_text().strip().splitlines()
    assert lines[0] == "k,j,gap,step,backtracks,err_u,err_v"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == iterations + 1
    ks = [int(row[0]) for row in rows]
    assert ks == list(range(len(rows)))
    js = np.array([float(row[1]) for row in rows])
    assert np.all(np.diff(js) <= 0.0)
    # the terminal record carries no step and no errors by default
    assert float(rows[-1][3]) == 0.0
    assert rows[-1][5] == "" and rows[-1][6] == ""


def test_rerun_is_byte_identical(tmp_path, capsys):
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    run_cli(FAST + ["--out-dir", dir_a])
    run_cli(FAST + ["--out-dir", dir_b])
    capsys.readouterr()
    for name in ("history.csv", "control.txt", "diagnostics.txt"):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()


def test_track_errors_populates_columns(tmp_path, capsys):
    run_cli(FAST + ["--track-errors", "--out-dir", tmp_path])
    capsys.readouterr()
    rows = [
        line.split(",")
        for line in (tmp_path / "history.csv").read_text().strip().splitlines()[1:]
    ]
    errs = [float(row[5]) for row in rows]
    assert errs[0] > 0.0  # zero start vs the reference solution
    assert errs[-1] <= errs[0]


def test_no_diagnostics_flag(tmp_path, capsys):
    code = run_cli(FAST + ["--no-diagnostics", "--out-dir", tmp_path])
    capsys.readouterr()
    assert code == 0
    assert not (tmp_path / "diagnostics.txt").exists()
    assert (tmp_path / "history.csv").is_file()


def test_unknown_problem_is_usage_error(capsys):
    code = run_cli(["run", "--problem", "no-such-problem"])
    err = capsys.readouterr().err
    assert code == 1
    assert "unknown problem" in err
    assert "stadler-ex1" in err  # the message lists what is available


def test_bad_flags_exit_one():
    with pytest.raises(SystemExit) as exc:
        run_cli(["run", "--bogus-flag"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run_cli(["run"])  # --problem is required
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run_cli([])  # a subcommand is required
    assert exc.value.code == 1


def test_unwritable_out_dir_exits_three(tmp_path, capsys):
    blocker = tmp_path / "blocked"
    blocker.write_text("a file where the directory should go\n")
    code = run_cli(FAST + ["--out-dir", blocker])
    assert code == 3
    assert "i/o failure" in capsys.readouterr().err


def test_missing_config_file_exits_three(tmp_path, capsys):
    code = run_cli(
        ["run", "--problem", "stadler-ex1", "--config", tmp_path / "nope.cfg"]
    )
    assert code == 3
    assert "i/o failure" in capsys.readouterr().err


def test_defaults_resolve_per_problem():
    parser = build_parser()
    config = resolve_config(parser.parse_args(["run", "--problem", "stadler-ex1"]))
    assert config == RunConfig(
        problem="stadler-ex1",
        n=64,
        nt=100,
        gap_tol=1e-10,
        max_iter=1000,
        alpha=0.5,
        gamma=0.99,
        out_dir=".",
        track_errors=False,
        diagnostics=True,
    )
    config = resolve_config(parser.parse_args(["run", "--problem", "parabolic-ex"]))
    assert config.n == 32 and config.nt == 100


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "settings.cfg"
    cfg.write_text(
        "# solver settings\n"
        "problem = parabolic-ex-1d\n"
        "n = 16   # grid nodes\n"
        "max_iter = 77\n"
        "tol = 1e-8\n"
        "track_errors = yes\n"
    )
    parser = build_parser()
    args = parser.parse_args(
        ["run", "--problem", "parabolic-ex-1d", "--config", str(cfg), "--n", "9"]
    )
    config = resolve_config(args)
    assert config.problem == "parabolic-ex-1d"
    assert config.n == 9  # flag beats file
    assert config.max_iter == 77  # file beats default
    assert config.gap_tol == 1e-8
    assert config.track_errors is True
    assert config.nt == 100  # untouched default


def test_config_file_rejects_bad_content(tmp_path, capsys):
    bad_key = tmp_path / "bad_key.cfg"
    bad_key.write_text("volume = 11\n")
    code = run_cli(
        ["run", "--problem", "stadler-ex1", "--config", bad_key]
    )
    assert code == 1
    assert "unknown setting" in capsys.readouterr().err

    bad_value = tmp_path / "bad_value.cfg"
    bad_value.write_text("max_iter = soon\n")
    code = run_cli(["run", "--problem", "stadler-ex1", "--config", bad_value])
    assert code == 1
    assert "bad value" in capsys.readouterr().err

    no_eq = tmp_path / "no_eq.cfg"
    no_eq.write_text("just words\n")
    code = run_cli(["run", "--problem", "stadler-ex1", "--config", no_eq])
    assert code == 1
    assert "expected key=value" in capsys.readouterr().err


def test_load_config_file_types(tmp_path):
    cfg = tmp_path / "typed.cfg"
    cfg.write_text("alpha = 0.25\ndiagnostics = false\nout_dir = results\n")
    settings = load_config_file(cfg)
    assert settings == {"alpha": 0.25, "diagnostics": False, "out_dir": "results"}


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "gcg", "list"],
        capture_output=True,
        text=True,
        cwd=tmp_path,
    )
    assert proc.returncode == 0
    assert "stadler-ex1" in proc.stdout
