import json

import numpy as np
import pytest

from mimo_ilc import casestudy as cs
from mimo_ilc.errors import InputError, NumericalError
from mimo_ilc.lti import evaluate_frf


# -- surrogate -----------------------------------------------------------------------


def test_surrogate_invariants(surrogate):
    c = surrogate.checks
    assert c["dominance_ratio"] <= 0.5
    assert c["interaction_min_above"] > 0.1
    for bw, target in zip(c["bandwidth_hz"], (3.0, 1.5)):
        assert abs(bw - target) <= 0.3 * target
    assert c["nmp_zeros"]
    assert abs(c["model_error_peak_hz"] - 38.0) <= 0.2 * 38.0


def test_surrogate_closed_loop_stable(surrogate):
    for T in (surrogate.S, surrogate.J, surrogate.J_hat):
        assert np.max(np.abs(T.poles)) < 1


def test_surrogate_nmp_zero_outside_unit_circle(surrogate):
    assert any(np.hypot(*z) > 1 for z in surrogate.checks["nmp_zeros"])


def test_surrogate_model_error_peak(surrogate):
    Jf = evaluate_frf(surrogate.J, surrogate.grid)
    Jh = evaluate_frf(surrogate.J_hat, surrogate.grid)
    rel = np.abs(Jh.data[:, 1, 1] - Jf.data[:, 1, 1]) / np.abs(Jf.data[:, 1, 1])
    assert abs(surrogate.grid.hz[np.argmax(rel)] - 38.0) <= 0.2 * 38.0


def test_invariant_violation_is_reported():
    params = cs.scenario_parameters({"checks": {"interaction_threshold": 10.0}})
    with pytest.raises(NumericalError, match="surrogate invariant violated: interaction"):
        cs.build_surrogate(params)


def test_unknown_override_rejected():
    with pytest.raises(InputError):
        cs.scenario_parameters({"plant": {"mass": 3.0}})


def test_parameters_are_frozen():
    a, b = cs.default_parameters(), cs.default_parameters()
    a["N"] = 7
    assert b["N"] == 3001


# -- references ----------------------------------------------------------------------


def test_references_shape_and_rest():
    r = cs.build_references()
    assert r.shape == (3001, 2)
    np.testing.assert_allclose(r[1] - r[0], 0, atol=1e-15)
    np.testing.assert_allclose(r[-1] - r[-2], 0, atol=1e-15)
    np.testing.assert_allclose(r[0], 0)
    np.testing.assert_allclose(r[-1], 0, atol=1e-15)


def test_reference_amplitudes_comparable():
    peak = np.max(np.abs(cs.build_references()), axis=0)
    assert max(peak) / min(peak) <= 3


def test_task_starts():
    p = cs.default_parameters()
    starts = cs.task_starts(p)
    assert starts == sorted(starts) and all(s > 50 for s in starts)
    r = cs.build_references(p)
    for k in starts:
        assert np.all(np.diff(r[k - 50:k + 1], axis=0) == 0)


def test_preactuation_helper():
    f = np.zeros((100, 1))
    f[40] = 0.5
    f[60] = -2.0
    assert cs.preactuation(f, [50, 70, 0], 20) == [0.25, 1.0, 0.0]
    assert cs.preactuation(np.zeros((10, 1)), [5], 3) == [0.0]


# -- procedure -----------------------------------------------------------------------


def test_naive_diverges_others_converge(scenario_report):
    res = scenario_report.results
    assert res["naive"].diverged and not res["naive"].convergent
    for m in ("alg1", "alg2", "alg3"):
        assert res[m].convergent and res[m].monotone and not res[m].diverged


def test_naive_passes_per_loop_test_only(scenario_report):
    rep = scenario_report.results["naive"].design.report
    # each loop satisfies its own |q_i M_ii| < 1 everywhere
    assert np.all(rep.qM < 1)
    assert not rep.convergent
    assert np.max(rep.rho) >= 1


def test_naive_violation_at_high_frequency(scenario_report):
    rep = scenario_report.results["naive"].design.report
    hz = rep.omega / (2 * np.pi * rep.ts)
    assert np.all(hz[rep.rho >= 1] > 20)


def test_designs_certified(scenario_report):
    for m in ("alg1", "alg2", "alg3"):
        rep = scenario_report.results[m].design.report
        assert rep.convergent
    assert scenario_report.results["alg2"].design.report.joint.verdict_convergent


def test_error_ordering(scenario_report):
    e = {m: scenario_report.results[m].e_inf_norm for m in ("alg1", "alg2", "alg3")}
    assert e["alg3"] < e["alg2"] < e["alg1"]


def test_cutoff_pattern(scenario_report):
    fc = {m: scenario_report.results[m].cutoffs for m in ("alg1", "alg2", "alg3")}
    assert fc["alg1"][0] == fc["alg1"][1] and fc["alg3"][0] == fc["alg3"][1]
    assert fc["alg2"][0] > fc["alg1"][0]
    assert fc["alg2"][0] > fc["alg2"][1]
    assert max(fc["alg2"]) >= fc["alg1"][0]
    assert fc["alg3"][0] > max(fc["alg1"][0], fc["alg2"][1])


def test_preactuation_all_converged(scenario_report):
    for m in ("alg1", "alg2", "alg3"):
        pre = scenario_report.results[m].preaction
        assert pre and min(pre) > 1e-3, (m, pre)


def test_interaction_reduced(scenario_report):
    assert scenario_report.interaction_after < scenario_report.interaction_before


def test_report_write(scenario_report, tmp_path):
    paths = scenario_report.write(tmp_path, comments=["tool x"], header={"tool": "x"})
    names = {p.relative_to(tmp_path).as_posix() for p in paths}
    assert {"table1.csv", "fig3.csv", "scenario.json", "alg3/trials.csv", "alg3/design.json"} <= names
    table = (tmp_path / "table1.csv").read_text().splitlines()
    assert table[0] == "# tool x"
    assert [row.split(",")[0] for row in table[2:]] == ["naive", "alg1", "alg2", "alg3"]
    doc = json.loads((tmp_path / "scenario.json").read_text())
    assert doc["header"] == {"tool": "x"}
    assert doc["results"]["modes"]["naive"]["e_inf_F"] is None
    assert doc["parameters"]["N"] == 3001
