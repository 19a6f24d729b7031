import json

import pytest

from check_acceptance import main as check_main
from evaluation.acceptance import check_reports, mean_transfer, mean_universality
from evaluation.harness import TransferCell, UniversalityRecord
from evaluation.reports import emit_report
from utils.errors import DataError


def _transfer(ce, li, li_early):
    """Off-diagonal cells at checkpoints (20, 300) plus noise the checks must skip"""
    cells = []
    for surrogate, victim in (("a", "b"), ("b", "a")):
        cells.append(TransferCell(surrogate, victim, "dtmi-ce", (20, 300), (0.0, ce), 10, 0))
        cells.append(TransferCell(surrogate, victim, "dtmi-ce-li", (20, 300), (li_early, li), 10, 0))
        cells.append(TransferCell(surrogate, surrogate, "dtmi-ce", (20, 300), (1.0, 1.0), 10, 0, True))
    cells.append(TransferCell("a+b", "a", "dtmi-ce", (300,), (1.0,), 10, 0))
    return cells


def _write_run(reports, ifgsm_count=1, ce_count=3, ce=0.2, li=0.3, li_early=0.1):
    for surrogate in ("a", "b"):
        for attack, count in (("ifgsm", ifgsm_count), ("dtmi-ce", ce_count)):
            records = [UniversalityRecord(j, 0, count) for j in range(4)]
            emit_report(records, "json", reports / f"universality__{attack}__{surrogate}.json")
    emit_report(_transfer(ce, li, li_early), "json", reports / "transfer.json")
    return reports


def test_mean_transfer_skips_white_box_and_ensembles(tmp_path):
    rows = json.loads(emit_report(_transfer(0.2, 0.3, 0.1), "json", tmp_path / "t.json").read_text())
    assert mean_transfer(rows, "dtmi-ce") == pytest.approx(0.2)
    assert mean_transfer(rows, "dtmi-ce-li", 20) == pytest.approx(0.1)
    with pytest.raises(DataError):
        mean_transfer(rows, "dtmi-ce", 100)
    with pytest.raises(DataError):
        mean_transfer(rows, "ifgsm")


def test_mean_universality():
    assert mean_universality([{"count": 1}, {"count": 4}]) == 2.5
    with pytest.raises(DataError):
        mean_universality([])


def test_directional_checks_pass(tmp_path):
    checks = check_reports(_write_run(tmp_path))
    assert [c.passed for c in checks] == [True, True, True]
    assert checks[0].detail == "3.000 vs 1.000"


def test_transfer_ties_pass_universality_ties_fail(tmp_path):
    checks = check_reports(_write_run(tmp_path, ifgsm_count=2, ce_count=2, ce=0.3, li=0.3, li_early=0.3))
    assert [c.passed for c in checks] == [False, True, True]


def test_directional_checks_fail(tmp_path):
    checks = check_reports(_write_run(tmp_path, ce=0.5, li=0.3, li_early=0.4))
    assert [c.passed for c in checks] == [True, False, False]


def test_ensemble_universality_reports_are_ignored(tmp_path):
    reports = _write_run(tmp_path)
    emit_report([UniversalityRecord(0, 0, 100)], "json", reports / "universality__ifgsm__a+b.json")
    assert check_reports(reports)[0].passed


def test_missing_reports(tmp_path):
    with pytest.raises(DataError):
        check_reports(tmp_path)
    reports = _write_run(tmp_path)
    (reports / "transfer.json").unlink()
    with pytest.raises(DataError) as err:
        check_reports(reports)
    assert "transfer.json" in str(err.value)


def test_script_exit_status(tmp_path, capsys):
    assert check_main([str(_write_run(tmp_path / "good"))])
    assert "ALL CHECKS PASSED (3/3)" in capsys.readouterr().out
    assert not check_main([str(_write_run(tmp_path / "bad", ce=0.9))])
    assert not check_main([str(tmp_path / "empty")])
