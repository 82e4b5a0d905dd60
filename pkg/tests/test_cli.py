import subprocess
import sys

import pytest

from dho2.cli import main

from test_config import SMALL


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_run_and_reports(cfg_file, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", "--config", str(cfg_file), "--out", str(out), "--workers", "3"]) == 0
    text = capsys.readouterr().out
    assert "trainer=dho2 workers=3" in text
    assert main(["report", "comm", "--in", str(out)]) == 0
    assert "ledger conserved (sent == received): True" in capsys.readouterr().out
    assert main(["report", "memory", "--in", str(out), "--sweep", "1,2,4,8"]) == 0
    assert "workers rank rows d_slots" in capsys.readouterr().out


def test_default_out_dir(cfg_file, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--config", str(cfg_file), "--trainer", "fosi"]) == 0
    assert (tmp_path / "runs" / "small-fosi" / "metrics.csv").is_file()


def test_usage_error_exit_code(cfg_file, tmp_path, capsys):
    cfg_file.write_text(SMALL.replace("K = 3", "K = 0"))
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "x")]) == 2
    assert "field: K" in capsys.readouterr().err


def test_missing_run_dir(tmp_path):
    assert main(["report", "comm", "--in", str(tmp_path / "nope")]) == 2


def test_bad_sweep(cfg_file, tmp_path):
    out = tmp_path / "r"
    main(["run", "--config", str(cfg_file), "--out", str(out)])
    assert main(["report", "memory", "--in", str(out), "--sweep", "1,two"]) == 2


def test_abort_exit_code(cfg_file, tmp_path):
    cfg_file.write_text(SMALL.replace("lr = 0.3", "lr = 0.3\n[train.fosi]\nlr = 1e6\nepochs = 50"))
    code = main(["run", "--config", str(cfg_file), "--trainer", "fosi", "--out", str(tmp_path / "a")])
    assert code == 3
    assert (tmp_path / "a" / "diagnostic.json").is_file()


def test_argparse_rejects_unknown_trainer():
    with pytest.raises(SystemExit) as err:
        main(["run", "--config", "quadratic", "--trainer", "newton"])
    assert err.value.code == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dho2.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "report" in proc.stdout
