"""The seeded sanity suite and its fault-injection hook."""

import numpy as np

from gepc.sanity import (CheckResult, prop1_instance, prop1_zero_error,
                         prop2_report, render_report, run_checks,
                         write_sanity_csv)


def test_full_suite_passes():
    checks = run_checks(seed=0)
    assert checks and all(c.passed for c in checks)


def test_only_filter_selects_substring():
    checks = run_checks(seed=0, only="mean_shift")
    names = [c.name for c in checks]
    assert names == ["mean_shift_0", "mean_shift_1", "mean_shift_4"]


def test_fault_injection_fails_identity_checks():
    checks = run_checks(seed=0, only="tweedie", score_scale=1.05)
    assert checks and not any(c.passed for c in checks)
    bad = {c.name for c in run_checks(seed=0, score_scale=1.05)
           if not c.passed}
    assert "tweedie_posterior_mean" in bad
    assert "posterior_cov_jacobian" in bad


def test_prop1_instances_are_seeded_and_varied():
    a = prop1_instance(0, seed=0)
    b = prop1_instance(0, seed=0)
    assert a.passed == b.passed
    assert a.measured.mean == b.measured.mean
    assert prop1_zero_error(0) and not prop1_zero_error(1)


def test_prop2_report_rate():
    assert prop2_report(n_points=200, seed=0).upper_pass_rate == 1.0


def test_csv_and_report_rendering(tmp_path):
    checks = [CheckResult("demo", 1.0, 1.0 + 1e-12, 0.0, True),
              CheckResult("broken", 0.0, 0.5, 0.1, False)]
    path = tmp_path / "sanity.csv"
    write_sanity_csv(path, checks)
    lines = path.read_text().splitlines()
    assert lines[0] == "check,expected,measured,stderr,pass"
    assert lines[1].split(",")[0] == "demo"
    assert lines[2].endswith(",0")
    report = render_report(checks)
    assert "PASS" in report and "FAIL" in report
