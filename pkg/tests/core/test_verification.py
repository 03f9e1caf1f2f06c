"""Tests for lecam.core.verification."""

import pandas as pd
import pytest

from lecam.core.verification import (
    A3_LEARNING_RATE,
    CHECKS,
    check_a1_sufficiency,
    check_a2_quantization,
    check_a3_gaussian_regression,
    check_b1_invariance_trap,
    check_d1_proxy_blindness,
    report_table,
    run_all,
)
from lecam.errors import ValidationError


class TestChecks:
    def test_a1(self):
        report = check_a1_sufficiency()
        assert report.passed
        assert report.status == "Confirmed"
        assert report.measured["wrong_kernel_mmd2"] > report.measured["mmd2"]

    def test_a2_single_width_is_degenerate(self):
        report = check_a2_quantization(deltas=(1.0,), n=500, steps=10)
        assert report.passed
        assert report.measured["degenerate"] == 1.0
        assert list(report.table.columns) == ["delta", "deficiency", "mmd2", "sigma", "risk_inflation"]

    def test_a2_empty_grid(self):
        with pytest.raises(ValidationError):
            check_a2_quantization(deltas=())

    @pytest.mark.slow
    def test_a2_monotone(self):
        report = check_a2_quantization()
        assert report.passed, report.table
        assert report.table["risk_inflation"].is_monotonic_increasing

    @pytest.mark.slow
    def test_a3(self):
        report = check_a3_gaussian_regression()
        assert report.passed, report.measured
        assert 1.0 <= report.measured["learned_noise"] <= 5.0
        assert abs(report.measured["lecam_clean_mse"] - report.measured["erm_clean_mse"]) <= 0.1
        assert set(report.table["method"]) == {"ERM", "Invariant", "LeCam"}

    def test_a3_noise_budget(self):
        report = check_a3_gaussian_regression(n=400, steps=20)
        assert report.measured["learned_noise"] <= A3_LEARNING_RATE * 20

    @pytest.mark.slow
    def test_b1(self):
        report = check_b1_invariance_trap()
        assert report.passed, report.measured
        assert report.measured["noise_recovered"] >= 0.5

    def test_d1(self):
        report = check_d1_proxy_blindness()
        assert report.passed, report.measured
        assert 0.35 <= report.measured["tv"] <= 0.45

    def test_d1_identical_mixture(self):
        report = check_d1_proxy_blindness(mu=0.0, sigma=1.0)
        assert report.measured["tv"] == pytest.approx(0.0, abs=1e-9)
        assert not report.passed


class TestBattery:
    def test_run_selected(self):
        reports = run_all(0, ["A1", "D1"])
        table = report_table(reports)
        assert isinstance(table, pd.DataFrame)
        assert list(table.columns) == ["test", "metric", "result", "status"]
        assert list(table["status"]) == ["Confirmed", "Confirmed"]

    def test_unknown_check(self):
        with pytest.raises(ValidationError):
            run_all(0, ["Z9"])

    def test_registry(self):
        assert sorted(CHECKS) == ["A1", "A2", "A3", "B1", "D1"]

    def test_report_payload(self):
        payload = check_d1_proxy_blindness().to_dict()
        assert payload["passed"] is True
        assert set(payload["measured"]) == {"tv", "mmd2_wide", "mmd2_median", "bandwidth"}
