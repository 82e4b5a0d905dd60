import json

import pytest

from dho2.config import apply_overrides, parse_config
from dho2.harness import (
    EXIT_ABORTED,
    EXIT_OK,
    comm_report,
    expected_d_slots,
    ledger_conserved,
    load_run,
    memory_report,
    read_metrics_csv,
    run_experiment,
    run_memory_table,
)
from dho2.trainers import METRIC_COLUMNS

from test_config import SMALL


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    outcome = run_experiment(parse_config(SMALL), out=out)
    return outcome, out


def test_artifacts_written(small_run):
    outcome, out = small_run
    assert outcome.status == EXIT_OK
    for name in ("config.ini", "metrics.csv", "ledger.csv", "memory.csv", "summary.json"):
        assert (out / name).is_file()
    rows = read_metrics_csv(out / "metrics.csv")
    assert list(rows[0]) == list(METRIC_COLUMNS)
    assert len(rows) == 6


def test_summary_contents(small_run):
    _, out = small_run
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "ok" and s["trainer"] == "dho2" and s["workers"] == 2
    assert s["n"] == 30 and s["refreshes"] == 3 and s["lanczos_iters"] == 16
    assert s["steps"] == 6 and s["total_modeled_ms"] > 0


def test_memory_table_of_run(small_run):
    _, out = small_run
    rows = run_memory_table(out)
    assert [r["expected"] for r in rows] == [15 * 17, 15 * 17]
    assert all(r["ok"] for r in rows)


def test_comm_report_of_run(small_run):
    _, out = small_run
    ledger, summary = load_run(out)
    checks = comm_report(ledger, summary)
    assert all(c.ok for c in checks), [c for c in checks if not c.ok]
    assert ledger_conserved(ledger)


def test_reruns_are_byte_identical(small_run, tmp_path):
    _, out = small_run
    run_experiment(parse_config(SMALL), out=tmp_path)
    for name in ("metrics.csv", "ledger.csv", "memory.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_abort_writes_diagnostic(tmp_path):
    cfg = parse_config(SMALL.replace("[train.sgd]\nbase = adam\nlr = 0.3", "[train.sgd]\nbase = sgd\nlr = 1e4\nepochs = 400"))
    cfg = apply_overrides(cfg, trainer="sgd")
    outcome = run_experiment(cfg, out=tmp_path)
    assert outcome.status == EXIT_ABORTED
    diag = json.loads((tmp_path / "diagnostic.json").read_text())
    assert "non-finite" in diag["message"]
    assert not (tmp_path / "metrics.csv").exists()


def test_sgd_run_has_no_lanczos(tmp_path):
    cfg = apply_overrides(parse_config(SMALL), trainer="sgd")
    outcome = run_experiment(cfg, out=tmp_path)
    ledger, summary = load_run(tmp_path)
    assert outcome.summary["refreshes"] == 0
    assert ledger.count("all_gather") == 0
    assert run_memory_table(tmp_path) == []


def test_memory_report_sweep():
    rep = memory_report(100, 9, (1, 2, 3, 4, 8))
    assert rep.ok
    assert rep.peak(1) == 1000 and rep.peak(2) == 500 and rep.peak(3) == 340 and rep.peak(8) == 130
    assert "workers rank rows" in rep.table()


def test_expected_slots_cover_remainder():
    assert expected_d_slots(10, 4, 3) == [20, 20, 10]
