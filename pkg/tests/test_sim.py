import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.signal import lfilter

from _systems import random_fir_design, rest_reference
from mimo_ilc import sim
from mimo_ilc import synthesis as sy
from mimo_ilc.errors import NonContractive, UnstableOperator
from mimo_ilc.lti import RationalTransfer, TransferMatrix

TS = 1e-3


def tf(num, den):
    return RationalTransfer(num, den, TS)


SHIFT3 = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)


def test_lift_delay_is_shift():
    op = sim.lift(TransferMatrix([[tf([1], [1, 0])]], TS), 3)
    np.testing.assert_array_equal(op.dense(), SHIFT3)


def test_lift_advance_is_transpose():
    op = sim.lift(sy.NoncausalFir(np.array([1.0, 0.0, 0.0]), TS), 3)
    np.testing.assert_array_equal(op.dense(), SHIFT3.T)


def test_lift_rejects_unstable():
    with pytest.raises(UnstableOperator):
        sim.lift(TransferMatrix([[tf([1], [1, -1.2])]], TS), 8)


def test_lift_matches_recursion(rng):
    num, den = [0.2, -0.1, 0.05], np.poly([0.9, 0.5 + 0.3j, 0.5 - 0.3j]).real
    op = sim.lift(TransferMatrix([[tf(num, den)]], TS), 64)
    u = rng.normal(size=64)
    b = np.concatenate([np.zeros(len(den) - len(num)), num])
    np.testing.assert_allclose(op.apply(u[:, None])[:, 0], lfilter(b, den, u), atol=1e-10)


def test_lift_transpose_consistent(rng):
    J, d = random_fir_design(rng)
    for op in (sim.lift(J, 40), sim.lift(d.L, 40), sim.lift(list(d.Q), 40)):
        A = op.dense()
        y = rng.normal(size=(40, 2))
        np.testing.assert_allclose(sim._vec(op.apply_T(y)), A.T @ sim._vec(y), atol=1e-12)


def test_zero_phase_lift_symmetric():
    Q = sim.lift([sy.design_zero_phase(30.0, TS)], 50).dense()
    np.testing.assert_allclose(Q, Q.T, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(Q)) > 0


# -- trials and fixed points ---------------------------------------------------------


def setup(rng, N=128, **kw):
    J, d = random_fir_design(rng, **kw)
    return J, d, sim.lift(J, N), sim.lift(np.eye(2), N), rest_reference(rng, N)


def test_deadbeat(rng):
    J, _, J_op, S_op, r = setup(rng, delay=0)
    L_op = sim.MatrixOperator(np.linalg.inv(J_op.dense()), J_op.N, 2, 2)
    recs = sim.run_trials((L_op, sim.lift(np.eye(2), J_op.N)), S_op, J_op, r, 3)
    assert recs[0].e_norm > 0
    assert recs[1].e_norm <= 1e-12 * recs[0].e_norm
    fp = sim.fixed_points((L_op, sim.lift(np.eye(2), J_op.N)), S_op, J_op, r)
    np.testing.assert_allclose(fp.e, 0, atol=1e-12)
    audit = sim.monotonicity_audit(recs, fp.f, fp.gamma)
    assert audit.ratios.size == 1 and audit.ratios[0] < 1e-10


def test_zero_q(rng):
    _, d, J_op, S_op, r = setup(rng)
    L_op = sim.lift(d.L, J_op.N)
    Q0 = sim.lift(np.zeros((2, 2)), J_op.N)
    recs = sim.run_trials((L_op, Q0), S_op, J_op, r, 4)
    for rec in recs[1:]:
        assert np.all(rec.f == 0)
        np.testing.assert_allclose(rec.e, r)
    fp = sim.fixed_points((L_op, Q0), S_op, J_op, r)
    assert np.all(fp.f == 0)
    np.testing.assert_allclose(fp.e, r)


def test_unit_q_gives_zero_error(rng):
    _, d, J_op, S_op, r = setup(rng, delay=0)
    fp = sim.fixed_points((sim.lift(d.L, J_op.N), sim.lift(np.eye(2), J_op.N)), S_op, J_op, r)
    assert np.linalg.norm(fp.e) <= 1e-8 * np.linalg.norm(r)


def test_contraction_bound(rng):
    for _ in range(20):
        J, d, J_op, S_op, r = setup(rng)
        L_op, Q_op = sim.lift_design(d, J_op.N)
        gamma = sim.lifted_gamma(sim.iteration_operator(L_op, Q_op, J_op))
        if gamma <= 0.5:
            break
    else:
        pytest.fail("no design with lifted gamma <= 0.5 found")
    fp = sim.fixed_points(d, S_op, J_op, r)
    recs = sim.run_trials(d, S_op, J_op, r, 51, f_inf=fp.f)
    d0 = np.linalg.norm(fp.f - recs[0].f)
    assert recs[50].f_dist <= gamma ** 50 * d0 + 1e-8
    assert all(b.f_dist <= gamma * a.f_dist + 1e-12 for a, b in zip(recs, recs[1:]))


def test_non_contractive():
    J_op = sim.lift(np.eye(1), 16)
    L_op = sim.lift(-np.eye(1), 16)      # I - L J = 2 I
    with pytest.raises(NonContractive):
        sim.fixed_points((L_op, sim.lift(np.eye(1), 16)), J_op, J_op, np.ones(16))


def test_divergence_cap():
    J_op = sim.lift(np.eye(1), 16)
    recs = sim.run_trials((sim.lift(-2 * np.eye(1), 16), sim.lift(np.eye(1), 16)), J_op, J_op,
                          np.ones(16), 200)
    assert recs[-1].diverged and len(recs) < 200
    assert recs[-1].e_norm > sim.DIVERGENCE_CAP


def test_zero_reference(rng):
    _, d, J_op, S_op, _ = setup(rng)
    recs = sim.run_trials(d, S_op, J_op, np.zeros((J_op.N, 2)), 5)
    assert all(np.all(rec.e == 0) and np.all(rec.f == 0) for rec in recs)
    fp = sim.fixed_points(d, S_op, J_op, np.zeros((J_op.N, 2)))
    assert np.all(fp.f == 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_linearity(seed, alpha):
    r = np.random.default_rng(seed)
    _, d, J_op, S_op, ref = setup(r, N=64)
    try:
        a = sim.fixed_points(d, S_op, J_op, ref)
    except NonContractive:
        assume(False)
    b = sim.fixed_points(d, S_op, J_op, alpha * ref)
    np.testing.assert_allclose(b.f, alpha * a.f, atol=1e-10 * max(1, abs(alpha)) * np.abs(a.f).max())
    np.testing.assert_allclose(b.e, alpha * a.e, atol=1e-10 * max(1, abs(alpha)) * np.abs(a.e).max())


def test_convergence_within_predicted_trials(rng):
    for _ in range(20):
        J, d, J_op, S_op, r = setup(rng)
        L_op, Q_op = sim.lift_design(d, J_op.N)
        gamma = sim.lifted_gamma(sim.iteration_operator(L_op, Q_op, J_op))
        if gamma < 0.9:
            break
    fp = sim.fixed_points(d, S_op, J_op, r, gamma=gamma)
    n = int(np.ceil(np.log(1e-6) / np.log(gamma)))
    recs = sim.run_trials(d, S_op, J_op, r, n + 1)
    assert np.linalg.norm(recs[n].e - fp.e) <= 1e-6 * recs[0].e_norm


# -- audit ---------------------------------------------------------------------------


def _records(dists):
    return [sim.TrialRecord(j, np.zeros((1, 1)), np.array([[x]]), 0.0) for j, x in enumerate(dists)]


def test_audit_examples():
    a = sim.monotonicity_audit(_records([1.0, 0.5, 0.25]), np.zeros((1, 1)), 0.5)
    np.testing.assert_allclose(a.ratios, [0.5, 0.5])
    assert a.monotone
    a = sim.monotonicity_audit(_records([1.0, 0.5, 0.6]), np.zeros((1, 1)), 0.5)
    assert not a.monotone
    a = sim.monotonicity_audit(_records([1.0, 0.0, 0.0]), np.zeros((1, 1)), 0.0)
    np.testing.assert_array_equal(a.ratios, [0.0])
    assert a.monotone


# -- export --------------------------------------------------------------------------


def test_csv_round_trip(rng, tmp_path):
    _, d, J_op, S_op, r = setup(rng, N=32)
    fp = sim.fixed_points(d, S_op, J_op, r)
    recs = sim.run_trials(d, S_op, J_op, r, 4, f_inf=fp.f)
    text = sim.trials_csv(recs, tmp_path / "trials.csv", comments=["hdr"])
    assert text.splitlines()[:2] == ["# hdr", "trial,e_norm_F,f_dist_to_fixed,diverged"]
    back = sim.read_trials_csv(tmp_path / "trials.csv")
    assert [b["e_norm_F"] for b in back] == [rec.e_norm for rec in recs]
    assert [b["f_dist_to_fixed"] for b in back] == [rec.f_dist for rec in recs]
    sim.signals_csv(recs[2], tmp_path / "trial_2_signals.csv")
    e, f = sim.read_signals_csv(tmp_path / "trial_2_signals.csv")
    np.testing.assert_array_equal(e, recs[2].e)
    np.testing.assert_array_equal(f, recs[2].f)
    assert (tmp_path / "trial_2_signals.csv").read_text().startswith("k,e_1,e_2,f_1,f_2\n")
