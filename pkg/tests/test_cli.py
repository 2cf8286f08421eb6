"""Command-line surface: argument handling, exit codes, emitted files."""

import os

import pytest

from powerhedge.cli import main
from powerhedge.synthetic import generate_study, write_study_config


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = generate_study(str(root / "data"), seed=7, start="2015-11-01", months=("2016-01",))
    cfg = write_study_config(
        str(root / "study.cfg"), paths, str(root / "out"),
        study_end="2016-01", restarts=1, n_samples=20, fit_maxiter=8, sparsity=0.05, seed=7,
    )
    return root, cfg


def test_run_writes_report_files(study, capsys):
    root, cfg = study
    assert main(["backtest", "run", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "total" in out and "wrote" in out
    for name in ("monthly.csv", "cumulative.csv", "summary.json"):
        assert (root / "out" / name).exists()


def test_run_overrides(study, capsys):
    root, cfg = study
    alt = root / "alt"
    code = main(["backtest", "run", "--config", cfg, "--out-dir", str(alt), "--format", "json", "--seed", "3"])
    assert code == 0
    assert (alt / "monthly.json").exists()
    assert not (alt / "monthly.csv").exists()


def test_month_prints_row(study, capsys):
    _, cfg = study
    assert main(["backtest", "month", "--config", cfg, "--month", "2016-01"]) == 0
    out = capsys.readouterr().out
    assert "v_base = " in out and "payoff_mio_gbp = " in out


def test_month_outside_range_is_config_error(study, capsys):
    _, cfg = study
    assert main(["backtest", "month", "--config", cfg, "--month", "2017-07"]) == 2
    assert "outside study range" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("study_start = 2016-01\nwat = 1\n")
    assert main(["backtest", "run", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_missing_data_file_exits_3(tmp_path, capsys):
    cfg = tmp_path / "study.cfg"
    cfg.write_text(
        "study_start = 2016-01\nstudy_end = 2016-01\n"
        "spot_csv = nope.csv\ndemand_csv = nope2.csv\nforwards_csv = nope3.csv\n"
    )
    assert main(["backtest", "run", "--config", str(cfg)]) == 3
    assert "data error" in capsys.readouterr().err


def test_data_stats_prints_histograms(study, capsys):
    root, _ = study
    code = main([
        "data", "stats",
        "--spot", str(root / "data" / "spot.csv"),
        "--demand", str(root / "data" / "demand.csv"),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "spot price" in out and "hourly load" in out
    assert "[0,1)" in out and "off-peak" in out


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["backtest", "run"])
    assert exc.value.code == 2
