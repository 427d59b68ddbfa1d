import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import eig2_radius, mu_bruteforce_2x2, random_complex
from mimo_ilc import analysis as an
from mimo_ilc.errors import ZeroDiagonalM
from mimo_ilc.frf import FrequencyGrid, FrfMatrix


def stack(M, K=4):
    return np.broadcast_to(np.asarray(M, dtype=complex), (K,) + np.shape(M)).copy()


def frf(M, K=4):
    return FrfMatrix(FrequencyGrid(np.linspace(0.1, 3, K), 1e-3), stack(M, K))


def factors_for(M, K=4):
    """Factors with J = I and L = I - M, so that I - L J = M."""
    M = np.asarray(M, dtype=complex)
    return an.factorize(stack(np.eye(len(M)) - M, K), frf(np.eye(len(M)), K))


# -- factorization ---------------------------------------------------------------


def test_factorize_diagonal():
    f = an.factorize(stack(np.diag([0.5, 2.0])), frf(np.diag([1.0, 0.3])))
    assert np.all(f.E == 0)


def test_factorize_no_learning():
    f = an.factorize(stack(np.zeros((2, 2))), frf([[1, 0.2], [0.3, 1]]))
    np.testing.assert_array_equal(f.M[0], np.eye(2))
    assert np.all(f.E == 0)


def test_factorize_zero_diagonal():
    with pytest.raises(ZeroDiagonalM):
        an.factorize(stack(np.eye(2)), frf([[1, 0.2], [0.3, 1]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 4))
def test_factorize_reconstruction(seed, n):
    r = np.random.default_rng(seed)
    f = an.factorize(random_complex(r, (5, n, n)), random_complex(r, (5, n, n)))
    np.testing.assert_allclose(np.diagonal(f.E, axis1=1, axis2=2), 0)
    np.testing.assert_allclose(f.Md[:, :, None] * f.I_plus_E, f.M, atol=1e-10)


# -- full-matrix tests and the common-Q bound ----------------------------------


def test_spectral_radius_zero_q():
    rho, ok = an.check_convergence_thm1(stack(np.zeros((2, 2))), stack(np.eye(2)), frf([[1, 3], [2, 1]]))
    assert np.all(rho == 0) and ok


def test_spectral_radius_exact_inverse(rng):
    J = random_complex(rng, (6, 2, 2))
    rho, ok = an.check_convergence_thm1(stack(np.eye(2), 6), np.linalg.inv(J), J)
    assert np.max(rho) < 1e-12 and ok
    gamma, mono, _ = an.check_monotonic_thm2(stack(np.eye(2), 6), np.linalg.inv(J), J)
    assert gamma < 1e-12 and mono


def test_spectral_radius_matches_quadratic_formula(rng):
    Q, L, J = (random_complex(rng, (50, 2, 2)) for _ in range(3))
    rho, _ = an.check_convergence_thm1(Q, L, J)
    want = eig2_radius(Q @ (np.eye(2) - L @ J))
    np.testing.assert_allclose(rho, want, rtol=1e-10)


def test_rho_sigma_gap():
    # I - L J = [[0, 2], [0, 0]] with Q = I
    J = frf([[1, -2], [0, 1]])
    rho, conv = an.check_convergence_thm1(stack(np.eye(2)), stack(np.eye(2)), J)
    gamma, mono, _ = an.check_monotonic_thm2(stack(np.eye(2)), stack(np.eye(2)), J)
    assert np.all(rho == 0) and conv
    assert gamma == pytest.approx(2.0) and not mono


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gamma_dominates_rho(seed):
    r = np.random.default_rng(seed)
    Q, L, J = (random_complex(r, (8, 3, 3)) for _ in range(3))
    rho, _ = an.check_convergence_thm1(Q, L, J)
    _, _, sig = an.check_monotonic_thm2(Q, L, J)
    assert np.all(sig >= rho * (1 - 1e-12))


def test_qd_bounds():
    J = frf(np.eye(2))
    b14, b15 = an.qd_feasible_bound(stack(np.eye(2)), J)
    assert np.all(np.isinf(b14)) and np.all(np.isinf(b15))
    b14, b15 = an.qd_feasible_bound(stack(np.eye(2) - np.diag([0.5, 0.25])), J)
    np.testing.assert_allclose(b14, 2.0)
    np.testing.assert_allclose(b15, 2.0)


# -- Gershgorin-type bounds ------------------------------------------------------


def test_gershgorin_no_interaction():
    r20, r21, r22 = an.gershgorin_bounds_thm4(factors_for(np.diag([0.3, 0.7])))
    for r in (r20, r21, r22):
        np.testing.assert_allclose(r, 1.0)


def test_gershgorin_hand_example():
    r20, r21, r22 = an.gershgorin_bounds_thm4(factors_for([[1, 0.5], [0.5, 1]]))
    np.testing.assert_allclose(r20, 2 / 3)
    np.testing.assert_allclose(r21, 2 / 3)
    # (I+E)(I+E)^H = [[1.25, 1], [1, 1.25]]
    np.testing.assert_allclose(r22, 1 / np.sqrt(2.25))


# -- structured singular value ---------------------------------------------------


@pytest.mark.parametrize("A, mu", [(np.diag([2.0, 0.5]), 2.0), (np.ones((2, 2)), 2.0),
                                   (np.eye(3), 1.0), ([[1, 0.5], [0.5, 1]], 1.5)])
def test_mu_examples(A, mu):
    val, ok = an.mu_upper_diag(np.asarray(A, dtype=complex))
    assert ok
    assert val == pytest.approx(mu, abs=1e-6)


def test_mu_hand_example_against_bruteforce():
    A = np.array([[1, 0.5], [0.5, 1]])
    assert mu_bruteforce_2x2(A) == pytest.approx(1.5, rel=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 4))
def test_mu_sandwich_and_scalings(seed, n):
    r = np.random.default_rng(seed)
    A = random_complex(r, (n, n))
    mu, _ = an.mu_upper_diag(A)
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    sig = np.linalg.norm(A, 2)
    assert rho - 1e-8 <= mu <= sig + 1e-8
    for _ in range(20):
        d = np.exp(r.normal(size=n))
        assert np.linalg.norm(d[:, None] * A / d[None, :], 2) >= mu - 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_mu_similarity_invariance(seed):
    r = np.random.default_rng(seed)
    A = random_complex(r, (3, 3))
    d = np.exp(r.normal(size=3))
    mu1, _ = an.mu_upper_diag(A)
    mu2, _ = an.mu_upper_diag(d[:, None] * A / d[None, :])
    assert mu2 == pytest.approx(mu1, rel=1e-5)


def test_ssv_bounds():
    r24, r25, warn = an.ssv_bounds_thm5(factors_for(np.diag([0.2, 0.9])))
    np.testing.assert_allclose(r24, 1.0)
    np.testing.assert_allclose(r25, 1.0)
    assert not warn
    r24, _, _ = an.ssv_bounds_thm5(factors_for([[1, 0.5], [0.5, 1]]))
    np.testing.assert_allclose(r24, 2 / 3, rtol=1e-6)


# -- joint check and report ------------------------------------------------------


def _bounds(M, K=4):
    M = np.asarray(M, dtype=complex)
    return an.DecentralizedBounds.compute(stack(np.eye(len(M)) - M, K), frf(np.eye(len(M)), K))


def test_joint_no_interaction():
    b = _bounds(np.diag([0.5, 0.8]))
    jc = an.joint_condition_check(b, np.full((4, 2), 0.9))
    assert jc.verdict_convergent
    assert jc.conv_label == ["Eq20"] * 4


def test_joint_certified_by_ssv_only():
    # I + E = [[1, 0.9], [0.1, 1]]: row bound of loop 1 is 1/1.9, column bound of
    # loop 2 is 1/1.9, the mu bound is 1/(1 + 0.3) for both loops
    b = _bounds([[1, 0.9], [0.1, 1]])
    q = np.full((4, 2), 0.6)
    lhs, flags = b.criteria(q)
    assert not flags["Eq20"].any() and not flags["Eq21"].any() and flags["Eq24"].all()
    jc = an.joint_condition_check(b, q)
    assert jc.verdict_convergent and jc.conv_label == ["Eq24"] * 4


def test_joint_all_violated():
    b = _bounds([[1, 0.9], [0.9, 1]])
    q = np.full((4, 2), 0.2)
    q[2] = 0.99
    jc = an.joint_condition_check(b, q)
    assert not jc.verdict_convergent
    assert jc.worst() == 2 and jc.conv_label[2] == "none"


def test_report_deadbeat():
    J = frf([[1, 0.3], [0.2, 1]])
    rep = an.convergence_report(stack(np.eye(2)), np.linalg.inv(J.data), J)
    assert rep.verdict_line().startswith("convergent=true monotone=true gamma=0.000000")
    assert rep.joint.verdict_convergent and rep.joint.verdict_monotone
    assert rep.notes and "decentralized bounds skipped" in rep.notes[0]


def test_report_columns_and_invariants(rng):
    J = FrfMatrix(FrequencyGrid(np.linspace(0, 3, 10), 1e-3), random_complex(rng, (10, 2, 2)) + 3 * np.eye(2))
    L = np.linalg.inv(J.data) * 0.7
    Q = stack(np.diag([0.9, 0.8]), 10)
    rep = an.convergence_report(Q, L, J)
    assert rep.columns()[:4] == ["omega", "rho", "sigma_max", "q1M11_abs"]
    assert rep.columns()[-2:] == ["convergent", "monotone"]
    assert all(len(row) == len(rep.columns()) for row in rep.rows())
    assert np.all(rep.gamma >= rep.rho)
    if rep.joint.verdict_convergent:
        assert all(lbl != "none" for lbl in rep.joint.conv_label)
    s = rep.summary()
    assert set(s) >= {"gamma", "convergent", "monotone", "worst_omega", "margins"}
