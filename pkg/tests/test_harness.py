import csv
import json
import math

import pytest

from empcal import harness
from empcal.config import ErrorModelKind, Scenario, ScenarioConfig, Suitability
from empcal.errors import ExcessiveFailures, SeparationDetected
from empcal.harness import (
    FUNNEL_HEADER,
    ITERATIONS_HEADER,
    SUMMARY_HEADER,
    estimate_iteration,
    run_iteration,
    run_scenario,
    score_iteration,
)
from empcal.metrics import Arm


def cfg(**kw):
    base = dict(
        scenario=Scenario.UNMEASURED_CONFOUNDER,
        suitability=Suitability.RANDOM_SUITABLE,
        n_subjects=3000,
        n_iterations=10,
        seed=314,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_null_model_synthesizes_no_positive_controls():
    est = estimate_iteration(cfg(error_model=ErrorModelKind.NULL), 0)
    assert est.positives == []
    assert len(est.negatives) == 5


def test_full_model_uses_five_negatives_and_fifteen_positives():
    est = estimate_iteration(cfg(), 0)
    assert len(est.negatives) == 5
    assert len(est.positives) == 15
    assert sorted({round(p.true_effect, 12) for p in est.positives}) != [0.0]
    assert all(n.true_effect == 0.0 for n in est.negatives)


def test_positive_controls_do_not_disturb_the_study():
    a = estimate_iteration(cfg(), 3, with_positives=False)
    b = estimate_iteration(cfg(), 3, with_positives=True)
    assert a.outcome == b.outcome and a.negatives == b.negatives


def test_run_iteration_is_reproducible():
    assert run_iteration(cfg(), 2) == run_iteration(cfg(), 2)


def test_record_wald_interval():
    rec, model = score_iteration(estimate_iteration(cfg(), 0), ErrorModelKind.FULL)
    assert rec.ci_low == pytest.approx(rec.theta_hat - 1.959963984540054 * rec.se_hat, abs=1e-12)
    assert model.kind is ErrorModelKind.FULL
    assert 0.0 <= rec.control_cal_coverage <= 1.0


def test_bit_identical_outputs_across_thread_counts(tmp_path):
    c = cfg(n_iterations=12)
    run_scenario(c, threads=1, out_dir=tmp_path / "one")
    run_scenario(c, threads=8, out_dir=tmp_path / "eight")
    for name in ("summary.csv", "iterations.csv", "funnel.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "eight" / name).read_bytes()


def test_output_files_and_headers(tmp_path):
    c = cfg(n_iterations=3)
    summary, records, manifest = run_scenario(c, out_dir=tmp_path)
    assert tuple(read_rows(tmp_path / "summary.csv")[0]) == SUMMARY_HEADER
    assert ",".join(SUMMARY_HEADER) == (
        "scenario,suitability,error_model,n,iterations,coverage_uncal,coverage_cal,std_abs_bias_uncal,"
        "std_abs_bias_cal,ci_width_uncal,ci_width_cal,control_cal_coverage,n_failed"
    )
    assert tuple(read_rows(tmp_path / "funnel.csv")[0]) == FUNNEL_HEADER == ("iteration", "arm", "bias", "se", "significant")
    it_rows = read_rows(tmp_path / "iterations.csv")
    assert tuple(it_rows[0]) == ITERATIONS_HEADER
    assert len(it_rows) == 1 + 2 * 3
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["config"] == c.to_dict()
    assert data["status"] == "complete" and data["failures"] == []
    assert data["tool_version"] and data["started"] and data["finished"]


def test_single_iteration_summary_equals_record(tmp_path):
    summary, records, _ = run_scenario(cfg(n_iterations=1))
    (r,) = records
    assert summary.coverage_uncal == float(r.ci_low <= r.theta_true <= r.ci_high)
    assert summary.coverage_cal == float(r.cal.ci_low <= r.theta_true <= r.cal.ci_high)
    assert summary.mean_ci_width_uncal == pytest.approx(r.ci_high - r.ci_low, abs=1e-15)
    assert summary.mean_ci_width_cal == pytest.approx(r.cal.ci_high - r.cal.ci_low, abs=1e-15)
    assert summary.mean_std_abs_bias_uncal == pytest.approx(abs(r.theta_hat - r.theta_true) / r.se_hat)
    assert summary.n_iterations_used == 1 and summary.n_failed == 0


def _failing_every(k):
    real = harness.estimate_iteration

    def fake(config, iteration, with_positives=None):
        if iteration % k == 0:
            raise SeparationDetected("forced")
        return real(config, iteration, with_positives)

    return fake


def test_partial_failures_are_logged(tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "estimate_iteration", _failing_every(5))
    c = cfg(n_iterations=10)
    summary, records, manifest = run_scenario(c, out_dir=tmp_path)
    assert summary.n_failed == 2 and summary.n_iterations_used == 8
    assert manifest.status == "partial"
    assert [f["iteration"] for f in manifest.failures] == [0, 5]
    assert all(f["error"] == "separation" for f in manifest.failures)
    # completeness: every iteration is either in the output or in the failure log
    seen = {int(r[0]) for r in read_rows(tmp_path / "iterations.csv")[1:]}
    logged = {f["iteration"] for f in json.loads((tmp_path / "manifest.json").read_text())["failures"]}
    assert seen | logged == set(range(10)) and not seen & logged


def test_excessive_failures_abort_after_writing_manifest(tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "estimate_iteration", _failing_every(3))
    with pytest.raises(ExcessiveFailures):
        run_scenario(cfg(n_iterations=10), out_dir=tmp_path)
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["status"] == "aborted"
    assert len(data["failures"]) == 4
    assert not (tmp_path / "summary.csv").exists()


def test_iteration_rows_agree_with_records(tmp_path):
    c = cfg(n_iterations=4)
    _, records, _ = run_scenario(c, out_dir=tmp_path)
    rows = read_rows(tmp_path / "iterations.csv")[1:]
    by_key = {(int(r[0]), r[1]): r for r in rows}
    for rec in records:
        for arm in Arm:
            row = by_key[(rec.iteration, arm.value)]
            est, se, lo, hi = rec.arm(arm)
            assert float(row[3]) == est and float(row[4]) == se
            assert float(row[5]) == lo and float(row[6]) == hi
            assert row[7] == ("1" if lo <= rec.theta_true <= hi else "0")
            assert 0.0 <= float(row[8]) <= 1.0
            assert not math.isnan(float(row[2]))
