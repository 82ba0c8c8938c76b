import json
import math

import numpy as np
import pytest

from nslab.experiments import (
    InapplicableTarget,
    derivative_jump,
    rank_one_breakdown_radius,
    rank_one_integral,
    run_claim1,
    run_remark1,
    run_roundtrip,
    run_smoothness_probe,
    run_transparent_sweep,
)
from nslab.ns_engine import CoefficientSet, reconstruct_potential
from nslab.potential_model import catalog

from oracles import rank_one_I_mp, rank_one_root_mp


def test_rank_one_closed_forms_against_quadrature():
    for r in (0.3, 2.0, 17.0):
        assert float(rank_one_integral(r)) == pytest.approx(float(rank_one_I_mp(r)), abs=1e-13)
    assert rank_one_breakdown_radius(-1.0) == pytest.approx(rank_one_root_mp(-1.0), abs=1e-10)
    assert rank_one_breakdown_radius(-0.6) is None


def test_remark1_zero_is_outcome_b(tmp_path):
    rep = run_remark1(CoefficientSet.zeros(2), R_max=10.0, out_dir=tmp_path)
    assert rep.metrics["outcome"] == "B" and rep.verdict == "pass"
    assert rep.metrics["max_abs_trace"] == 0 and rep.metrics["moment_Q1"] == 0
    data = json.loads((tmp_path / "remark1_report.json").read_text())
    assert data["verdict"] == "pass"
    assert (tmp_path / "remark1_trace.csv").exists()
    assert any("artifact choice" in n for n in data["notes"])


def test_remark1_breakdown_is_outcome_a():
    rep = run_remark1(CoefficientSet.rank_one(-1.0), R_max=10.0)
    assert rep.metrics["outcome"] == "A"
    assert rep.metrics["breakdown_radius"] == pytest.approx(rank_one_root_mp(-1.0), abs=1e-3)


def test_remark1_outcome_b_implies_null_moment():
    for c in (CoefficientSet.rank_one(0.3), CoefficientSet([0.1, -0.1, 0.05])):
        rep = run_remark1(c, R_max=30.0)
        m = rep.metrics
        if m["outcome"] == "B":
            assert m["bounded_trace"] and abs(m["moment_Q1"]) <= m["tol_null"]
            assert abs(m["moment_Q1_partial"]) <= m["partial_moment_bound"] + 1e-3


def test_claim1_gap_and_ordering(tmp_path):
    outs = [reconstruct_potential(c, r_max=20.0) for c in (CoefficientSet.zeros(0), CoefficientSet.rank_one(0.3))]
    rep = run_claim1(catalog("exponential"), outs, out_dir=tmp_path)
    assert rep.verdict == "pass"
    zero = rep.metrics["pairs"][0]
    assert zero["norm_q_minus_v"] == pytest.approx(1.0, abs=1e-12)
    assert zero["f_q_minus_v"] == pytest.approx(1.0, abs=1e-12)
    for p in rep.metrics["pairs"]:
        assert abs(p["f_q_minus_v"]) <= p["norm_q_minus_v"]
        assert p["linearity_error"] <= 1e-12


def test_claim1_rejects_zero_moment_target():
    with pytest.raises(InapplicableTarget):
        run_claim1(catalog("zero-moment"), [])


def test_transparent_sweep_rows(tmp_path):
    rep = run_transparent_sweep([0.0, -0.5, -1.0], R_max=60.0, out_dir=tmp_path)
    rows = rep.metrics["rows"]
    assert rep.verdict == "pass"
    assert rows[0]["breakdown_radius"] is None and rows[0]["max_abs_delta"] < 1e-12
    assert rows[1]["breakdown_radius"] is None
    assert rows[2]["breakdown_radius"] == pytest.approx(rank_one_root_mp(-1.0), abs=1e-3)
    lines = (tmp_path / "transparent_sweep.csv").read_text().splitlines()
    assert lines[0] == "c0,breakdown_radius,oracle_radius" and len(lines) == 4


def test_roundtrip_cases():
    assert run_roundtrip(CoefficientSet.zeros(0), L=3).metrics["max_abs_dtan"] == 0
    ok = run_roundtrip(CoefficientSet.rank_one(0.2), L=0)
    assert ok.verdict == "pass" and ok.metrics["max_abs_dtan"] <= 2e-3
    bad = run_roundtrip(CoefficientSet.rank_one(-1.0), L=0)
    assert bad.verdict == "informative"
    assert bad.metrics["finding"] == "round trip impossible"
    assert bad.metrics["breakdown_radius"] == pytest.approx(rank_one_root_mp(-1.0), abs=1e-3)


def test_derivative_jump_estimator():
    f = lambda r: np.where(r < 1.0, np.exp(-r), 0.0)
    assert derivative_jump(f, 1.0, 0.01) == pytest.approx(math.exp(-1), rel=1e-5)
    # smooth functions: one-sided stencils agree to O(h^3)
    e1, e2 = derivative_jump(np.sin, 1.0, 0.02), derivative_jump(np.sin, 1.0, 0.01)
    assert e2 < 1e-5 and e1 / e2 > 6


def test_smoothness_probe_fit_failure_is_a_finding():
    rep = run_smoothness_probe(catalog("kink"), L=8)
    assert rep.verdict == "informative"
    assert rep.metrics.get("finding") == "fit failed" or "distance" in rep.metrics


def test_smoothness_probe_analytic_target_has_no_claim():
    rep = run_smoothness_probe(catalog("exponential", depth=0.3), L=4)
    assert rep.verdict == "informative"
    assert "jump_ratio" not in rep.metrics
