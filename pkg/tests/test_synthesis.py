import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from mimo_ilc import synthesis as sy
from mimo_ilc.errors import (CutoffOutOfRange, FitTooCoarse, IllConditioned, ModelMissing,
                             NoFeasibleCutoff)
from mimo_ilc.frf import FrequencyGrid, FrfMatrix

TS = 1e-3
GRID = FrequencyGrid.uniform(2048, TS)


def nmp_target(omega):
    z = np.exp(1j * omega)
    return (z - 1.09) / (z - 0.5) * (0.5 / 0.09)


# -- inversion ---------------------------------------------------------------------


def test_invert_identity():
    fir = sy.invert_frf_to_fir(FrfMatrix(GRID, np.ones(len(GRID))), K=10, reg=0)
    expect = np.zeros(21)
    expect[10] = 1
    np.testing.assert_allclose(fir.taps[0, 0], expect, atol=1e-12)
    assert fir.fit_error < 1e-10


def test_invert_delay_gives_advance():
    fir = sy.invert_frf_to_fir(FrfMatrix(GRID, np.exp(-1j * GRID.omega)), K=10, reg=0)
    assert np.argmax(np.abs(fir.taps[0, 0])) == 10 - 1          # lag -1
    assert fir.taps[0, 0, 9] == pytest.approx(1.0, abs=1e-12)
    assert fir.fit_error < 1e-10


def test_invert_nonminimum_phase():
    T = nmp_target(GRID.omega)
    fir = sy.invert_frf_to_fir(FrfMatrix(GRID, T), K=200, reg=0)
    band = GRID.omega < 0.9 * np.pi
    err = np.abs(1 - fir.response(GRID.omega)[band, 0, 0] * T[band])
    assert np.max(err) < 1e-3
    # an anticausal tail is essential: most of the energy sits at negative lags
    h = fir.taps[0, 0]
    assert np.sum(h[:200] ** 2) > np.sum(h[201:] ** 2)


def test_fit_error_decreases_with_preview():
    tgt = FrfMatrix(GRID, nmp_target(GRID.omega))
    errs = [sy.invert_frf_to_fir(tgt, K=K, reg=0).fit_error for K in (25, 50, 100, 200)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_fit_error_bound_and_conditioning():
    tgt = FrfMatrix(GRID, nmp_target(GRID.omega))
    with pytest.raises(FitTooCoarse):
        sy.invert_frf_to_fir(tgt, K=5, reg=0, max_error=1e-3)
    sing = FrfMatrix(GRID, np.broadcast_to(np.ones((2, 2)), (len(GRID), 2, 2)).copy())
    with pytest.raises(IllConditioned):
        sy.invert_frf_to_fir(sing, K=5, reg=0)


def test_fir_response_matches_sum():
    rng = np.random.default_rng(3)
    fir = sy.NoncausalFir(rng.normal(size=(2, 2, 9)))
    w = np.array([0.0, 0.4, 2.0])
    want = np.einsum("ijm,km->kij", fir.taps, np.exp(-1j * np.outer(w, np.arange(-4, 5))))
    np.testing.assert_allclose(fir.response(w), want, atol=1e-12)


# -- robustness filter ---------------------------------------------------------------


@pytest.mark.parametrize("order", [1, 2, 3])
def test_zero_phase_response(order):
    fc = 40.0
    q = sy.design_zero_phase(fc, TS, order)
    assert q.response(0.0) == pytest.approx(1.0, abs=1e-15)
    assert q.response(2 * np.pi * fc * TS) == pytest.approx(0.5, abs=1e-12)
    r = q.response(GRID.omega)
    assert np.isrealobj(r) and np.all(r > 0) and np.all(np.diff(r) <= 1e-15)


def test_zero_phase_first_order_oracle():
    # first-order Butterworth via bilinear transform, squared
    from scipy.signal import butter, freqz
    fc = 25.0
    b, a = butter(1, fc, fs=1 / TS)
    w, h = freqz(b, a, worN=[0.0, 2 * np.pi * fc * TS])
    q = sy.design_zero_phase(fc, TS)
    np.testing.assert_allclose(q.response(w), np.abs(h) ** 2, atol=1e-12)


def test_zero_phase_near_nyquist():
    # the limit f_c = Nyquist keeps the whole grid at or above 1/2
    assert np.min(sy.ZeroPhaseFilter(500.0, TS).response(GRID.omega)) >= 0.5 - 1e-12
    assert np.min(sy.design_zero_phase(499.9, TS).response(GRID.omega)) >= 0.5 - 1e-6


@pytest.mark.parametrize("fc", [0.0, -1.0, 500.0, 800.0])
def test_cutoff_out_of_range(fc):
    with pytest.raises(CutoffOutOfRange):
        sy.design_zero_phase(fc, TS)


# -- cut-off tuning ------------------------------------------------------------------


def advance_fir(n):
    taps = np.zeros((n, n, 3))
    for i in range(n):
        taps[i, i, 0] = 1.0
    return sy.NoncausalFir(taps, TS)


def curvature_system(c):
    """Diagonal J with 1 - l_i J_ii = -(0.01 + c_i omega^2) for the one-step advance l_i."""
    w = GRID.omega
    data = np.zeros((len(w), len(c), len(c)), dtype=complex)
    for i, ci in enumerate(c):
        data[:, i, i] = np.exp(-1j * w) * (1.01 + ci * w ** 2)
    return FrfMatrix(GRID, data)


def test_autotune_exact_inverse_hits_cap():
    J = FrfMatrix(GRID, np.broadcast_to(np.exp(-1j * GRID.omega)[:, None, None] * np.eye(2),
                                        (len(GRID), 2, 2)).copy())
    fc, design = sy.autotune_qd(advance_fir(2), J)
    assert fc == pytest.approx(499.9)
    assert design.report.convergent


def test_autotune_single_dip():
    w = GRID.omega
    k15 = int(np.argmin(np.abs(w - 2 * np.pi * 15 * TS)))
    bound = np.full(len(w), np.inf)
    bound[k15] = 0.8
    fc = sy.tune_common_cutoff(bound, w, TS)

    def q_at(f, wq):
        a = sy._one_pole(2 * np.pi * f * TS, 0.5)
        return (1 - a) ** 2 / (1 - 2 * a * np.cos(wq) + a * a)

    limit = brentq(lambda f: q_at(f, w[k15]) - 0.8, 1.0, 100.0)
    assert limit - 0.1 - 1e-9 <= fc <= limit
    assert sy.design_zero_phase(fc, TS).response(w[k15]) < 0.8


def test_autotune_infeasible():
    bound = np.full(len(GRID), 0.5)
    with pytest.raises(NoFeasibleCutoff):
        sy.tune_common_cutoff(bound, GRID.omega, TS)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_autotune_monotone_in_bound(seed):
    r = np.random.default_rng(seed)
    w = GRID.omega
    bound = 1.0 + np.exp(r.normal(size=len(w))) * (w > 0.05)
    bound[w <= 0.05] = np.inf
    raised = bound * (1 + r.uniform(0, 0.5, size=len(w)))
    assert sy.tune_common_cutoff(raised, w, TS) >= sy.tune_common_cutoff(bound, w, TS)


def test_decentralized_siso_recovery():
    J = curvature_system([0.5, 5.0])
    L = advance_fir(2)
    fcs, design = sy.autotune_decentralized(L, J)
    assert fcs == sy.tune_independent(L, J)
    fc_common, _ = sy.autotune_qd(L, J)
    assert min(fcs) >= fc_common and fcs[0] > fc_common
    assert design.report.joint.verdict_convergent


def test_design_round_trip(tmp_path):
    J = curvature_system([0.5, 5.0])
    d = sy.build_design("alg2", None, J, L=advance_fir(2))
    path = tmp_path / "design.json"
    d.to_json(path)
    back = sy.IlcDesign.from_json(path)
    np.testing.assert_array_equal(back.L.taps, d.L.taps)
    assert back.cutoffs == d.cutoffs and back.mode == "alg2"
    doc = json.loads(path.read_text())
    assert doc["mode"] == "alg2" and "report" in doc


def test_design_requires_model():
    J = curvature_system([0.5, 5.0])
    with pytest.raises(ModelMissing, match="centralized mode requires full MIMO model"):
        sy.build_design("alg3", None, J)
    with pytest.raises(ModelMissing):
        sy.build_design("alg1", None, J)
