"""Learning and robustness filter synthesis, and cut-off auto-tuning."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as an
from .errors import (CutoffOutOfRange, DimensionMismatch, FitTooCoarse, IllConditioned,
                     InputError, ModelMissing, NoFeasibleCutoff)
from .frf import FrequencyGrid, FrfMatrix, _read_text
from .lti import TransferMatrix, evaluate_frf

MODES = ("naive", "alg1", "alg2", "alg3")
MODE_TAGS = {
    "naive": "naive-siso",
    "alg1": "robust-multiloop",
    "alg2": "decentralized",
    "alg3": "centralized",
}
TARGETS = ("convergent", "monotone")
TUNE_RES_HZ = 0.1
TUNE_MIN_HZ = 0.5


# -- filters ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoncausalFir:
    """Two-sided FIR matrix; ``taps[i, k, K + m]`` is the coefficient of lag ``m``."""

    taps: np.ndarray
    ts: float = 1.0
    fit_error: float = float("nan")

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim == 1:
            taps = taps[None, None, :]
        if taps.ndim != 3 or taps.shape[2] % 2 != 1:
            raise DimensionMismatch("FIR taps must be (n_out, n_in, 2K+1)")
        if not np.all(np.isfinite(taps)):
            raise InputError("FIR taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def K(self) -> int:
        return (self.taps.shape[2] - 1) // 2

    @property
    def shape(self) -> tuple[int, int]:
        return self.taps.shape[:2]

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    def response(self, omega) -> np.ndarray:
        """``sum_m h(m) exp(-i omega m)`` as ``(K, n_out, n_in)``."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        P = _uniform_size(omega)
        if P is not None and 2 * P >= self.taps.shape[2]:
            # uniform grid pi k / P: one FFT of the taps wrapped to period 2P
            buf = np.zeros(self.shape + (2 * P,))
            buf[:, :, self.lags % (2 * P)] = self.taps
            return np.moveaxis(np.fft.rfft(buf, axis=-1), -1, 0)
        out = np.empty((omega.size,) + self.shape, dtype=complex)
        chunk = 512
        for s in range(0, omega.size, chunk):
            W = np.exp(-1j * np.outer(omega[s:s + chunk], self.lags))
            out[s:s + chunk] = np.einsum("wm,ikm->wik", W, self.taps)
        return out

    def frf(self, grid: FrequencyGrid) -> FrfMatrix:
        return FrfMatrix(grid, self.response(grid.omega))

    @classmethod
    def diagonal(cls, parts: list["NoncausalFir"]) -> "NoncausalFir":
        K = max(p.K for p in parts)
        n = len(parts)
        taps = np.zeros((n, n, 2 * K + 1))
        for i, p in enumerate(parts):
            taps[i, i, K - p.K:K + p.K + 1] = p.taps[0, 0]
        err = max(p.fit_error for p in parts)
        return cls(taps, parts[0].ts, err)

    def to_dict(self) -> dict:
        return {"K": self.K, "ts": self.ts, "fit_error": self.fit_error, "taps": self.taps.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoncausalFir":
        return cls(np.asarray(d["taps"], dtype=float), d.get("ts", 1.0), d.get("fit_error", float("nan")))


def _uniform_size(omega: np.ndarray) -> int | None:
    """``P`` when ``omega`` is exactly ``pi k / P`` for ``k = 0..P``."""
    P = omega.size - 1
    if P < 1 or omega[0] != 0:
        return None
    if not np.allclose(omega, np.pi * np.arange(P + 1) / P, rtol=0, atol=1e-12):
        return None
    return P


@dataclass(frozen=True, eq=False)
class ZeroPhaseFilter:
    """Forward-backward low-pass; response is the squared magnitude of a causal prototype.

    The prototype is a cascade of ``order`` identical one-pole sections
    ``(1 - a) / (1 - a z^-1)``, with ``a`` placed so the squared magnitude
    of the cascade is exactly 1/2 at the cut-off. The response is real, 1 at
    DC, non-increasing in frequency and strictly positive up to Nyquist.
    """

    fc: float
    ts: float
    order: int = 1

    def __post_init__(self):
        nyq = 0.5 / self.ts
        if not 0 < self.fc <= nyq:
            raise CutoffOutOfRange(f"cut-off {self.fc} Hz outside (0, {nyq}) Hz")
        if self.order < 1:
            raise InputError("filter order must be >= 1")

    @property
    def pole(self) -> float:
        return _one_pole(2 * np.pi * self.fc * self.ts, 0.5 ** (1.0 / self.order))

    def response(self, omega) -> np.ndarray:
        a = self.pole
        omega = np.asarray(omega, dtype=float)
        sec = (1 - a) ** 2 / (1 - 2 * a * np.cos(omega) + a * a)
        return sec ** self.order

    def prototype_impulse(self, N: int) -> np.ndarray:
        """First ``N`` samples of the causal prototype's impulse response."""
        a = self.pole
        h1 = (1 - a) * a ** np.arange(N)
        h = h1
        for _ in range(self.order - 1):
            h = np.convolve(h, h1)[:N]
        return h

    def to_dict(self) -> dict:
        return {"fc": self.fc, "order": self.order}


def _one_pole(wc: float, c: float) -> float:
    """Pole ``a`` in (0, 1) with ``(1-a)^2 / (1 - 2a cos wc + a^2) = c``."""
    b = 1 - c * np.cos(wc)
    disc = max(b * b - (1 - c) ** 2, 0.0)
    return float((b - np.sqrt(disc)) / (1 - c))


def design_zero_phase(fc: float, ts: float, order: int = 1) -> ZeroPhaseFilter:
    nyq = 0.5 / ts
    if not 0 < fc < nyq:
        raise CutoffOutOfRange(f"cut-off {fc} Hz outside (0, {nyq}) Hz")
    return ZeroPhaseFilter(float(fc), float(ts), order)


def q_response(filters, omega) -> np.ndarray:
    """Diagonal response ``(K, n)`` of a sequence of zero-phase filters."""
    return np.stack([f.response(omega) for f in filters], axis=1)


# -- learning filter by regularized inversion ----------------------------------


def regularized_inverse(T: np.ndarray, reg: float) -> np.ndarray:
    """``(T^H T + lam I)^-1 T^H`` with ``lam = reg * max sigma(T)^2``."""
    s = np.linalg.svd(T, compute_uv=False)
    smax = float(np.max(s[:, 0]))
    if reg == 0:
        if np.min(s[:, -1]) < 1e-8 * smax:
            raise IllConditioned(
                f"target nearly singular (min sigma {np.min(s[:, -1]):.3g}, max {smax:.3g}); use reg > 0")
        return np.linalg.inv(T)
    lam = reg * smax ** 2
    TH = np.conj(np.swapaxes(T, 1, 2))
    n = T.shape[-1]
    return np.linalg.solve(TH @ T + lam * np.eye(n), TH)


def invert_frf_to_fir(target: FrfMatrix, K: int = 200, reg: float = 1e-8,
                      max_error: float | None = None) -> NoncausalFir:
    """Two-sided FIR approximation of the (regularized) inverse of ``target``.

    On a uniform grid ``pi k / P`` the taps follow from an inverse DFT of the
    pointwise inverse; on any other grid they are fitted by least squares.
    The reported fit error is ``max sigma_max(I - L target)`` over the grid.
    """
    target._require_square()
    if K < 0:
        raise InputError("preview length K must be >= 0")
    T = target.data
    W = regularized_inverse(T, reg)
    grid = target.grid
    n = T.shape[-1]
    lags = np.arange(-K, K + 1)
    if grid.is_uniform_full and 2 * K + 1 <= 2 * (len(grid) - 1):
        P = len(grid) - 1
        full = np.concatenate([W, np.conj(W[-2:0:-1])], axis=0)     # length 2P
        h = np.fft.ifft(full, axis=0).real                          # h[m mod 2P]
        taps = np.moveaxis(h[lags % (2 * P)], 0, -1)
    else:
        E = np.exp(-1j * np.outer(grid.omega, lags))
        A = np.vstack([E.real, E.imag])
        rhs = W.reshape(len(grid), n * n)
        b = np.vstack([rhs.real, rhs.imag])
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        taps = np.moveaxis(sol.reshape(2 * K + 1, n, n), 0, -1)
    fir = NoncausalFir(taps, grid.ts)
    L = fir.response(grid.omega)
    err = float(np.max(an.max_singular_value(np.eye(n) - L @ T)))
    fir = NoncausalFir(taps, grid.ts, err)
    if max_error is not None and err > max_error:
        raise FitTooCoarse(f"FIR fit error {err:.3g} exceeds bound {max_error:.3g} (K={K})")
    return fir


def invert_model(model: TransferMatrix, K: int = 200, reg: float = 1e-8, P: int = 8192,
                 per_loop: bool = False) -> NoncausalFir:
    """Learning filter from a parametric model sampled on a dense uniform grid.

    ``per_loop`` inverts each diagonal entry separately (regularization
    scaled per loop); otherwise the full matrix is inverted.
    """
    grid = FrequencyGrid.uniform(P, model.ts)
    if per_loop:
        diag = model.diag() if model.ny > 1 else model
        data = evaluate_frf(diag, grid).data
        parts = [invert_frf_to_fir(FrfMatrix(grid, data[:, i, i]), K, reg) for i in range(model.ny)]
        return NoncausalFir.diagonal(parts)
    return invert_frf_to_fir(evaluate_frf(model, grid), K, reg)


# -- cut-off tuning -----------------------------------------------------------


def _lattice(ts: float, res: float = TUNE_RES_HZ, f_min: float = TUNE_MIN_HZ):
    nyq = 0.5 / ts
    lo = int(np.ceil(f_min / res - 1e-9))
    hi = int(np.ceil(nyq / res - 1e-9)) - 1
    return lo, hi, res


def _bisect_largest(feasible, lo: int, hi: int) -> int | None:
    """Largest integer k in [lo, hi] with feasible(k); feasibility is monotone."""
    if not feasible(lo):
        return None
    if feasible(hi):
        return hi
    good, bad = lo, hi
    while bad - good > 1:
        mid = (good + bad) // 2
        if feasible(mid):
            good = mid
        else:
            bad = mid
    return good


def tune_common_cutoff(bound: np.ndarray, omega: np.ndarray, ts: float, order: int = 1,
                       res: float = TUNE_RES_HZ, f_min: float = TUNE_MIN_HZ) -> float:
    """Largest lattice cut-off with ``q(omega) < bound(omega)`` on the whole grid."""
    lo, hi, res = _lattice(ts, res, f_min)
    rho = np.where(np.isinf(bound), 0.0, 1.0 / np.where(bound == 0, 1e-300, bound))

    def feasible(k):
        q = ZeroPhaseFilter(k * res, ts, order).response(omega)
        return bool(np.all(an._holds(q * rho, 1.0)))

    k = _bisect_largest(feasible, lo, hi)
    if k is None:
        worst = omega[int(np.argmin(bound))] / (2 * np.pi * ts)
        raise NoFeasibleCutoff(
            f"no cut-off >= {lo * res:.1f} Hz satisfies the bound (tightest near {worst:.3g} Hz)")
    return round(k * res, 10)


@dataclass(eq=False)
class IlcDesign:
    L: NoncausalFir
    Q: tuple
    mode: str
    target: str = "convergent"
    report: an.ConvergenceReport | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown design mode {self.mode!r}")
        self.Q = tuple(self.Q)
        if len(self.Q) != self.L.shape[0]:
            raise DimensionMismatch("Q needs one filter per loop")
        if self.mode in ("alg1", "alg3") and len({q.fc for q in self.Q}) != 1:
            raise InputError(f"mode {self.mode} requires Q = q_d I")

    @property
    def n(self) -> int:
        return len(self.Q)

    @property
    def cutoffs(self) -> list[float]:
        return [q.fc for q in self.Q]

    @property
    def ts(self) -> float:
        return self.Q[0].ts

    def q_response(self, omega) -> np.ndarray:
        return q_response(self.Q, omega)

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "mode_tag": MODE_TAGS[self.mode],
            "target": self.target,
            "ts": self.ts,
            "Q": [q.to_dict() for q in self.Q],
            "L": self.L.to_dict(),
            "fit_error": self.L.fit_error,
            "info": self.info,
        }
        if self.report is not None:
            d["report"] = self.report.summary()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IlcDesign":
        try:
            ts = float(d["ts"])
            Q = [ZeroPhaseFilter(float(q["fc"]), ts, int(q.get("order", 1))) for q in d["Q"]]
            L = NoncausalFir.from_dict(d["L"])
            return cls(L, Q, d["mode"], d.get("target", "convergent"), None, d.get("info", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"design JSON malformed: {exc}") from None

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path_or_text) -> "IlcDesign":
        return cls.from_dict(json.loads(_read_text(path_or_text)))


def _attach_report(design: IlcDesign, L_resp, J_frf, bounds=None) -> IlcDesign:
    q = design.q_response(J_frf.omega)
    design.report = an.convergence_report(q, L_resp, J_frf, bounds)
    return design


def autotune_qd(L: NoncausalFir, J_frf: FrfMatrix, target: str = "convergent", order: int = 1,
                mode: str = "alg1"):
    """Common ``Q = q_d I`` with the largest admissible cut-off (exact common-Q test)."""
    if target not in TARGETS:
        raise InputError(f"unknown target {target!r}")
    L_resp = L.response(J_frf.omega)
    b_conv, b_mono = an.qd_feasible_bound(L_resp, J_frf)
    bound = b_conv if target == "convergent" else b_mono
    fc = tune_common_cutoff(bound, J_frf.omega, J_frf.grid.ts, order)
    design = IlcDesign(L, [ZeroPhaseFilter(fc, J_frf.grid.ts, order)] * L.shape[0], mode, target)
    design.info["bound_min"] = float(np.min(bound))
    return fc, _attach_report(design, L_resp, J_frf)


def _joint_feasible(bounds: an.DecentralizedBounds, q: np.ndarray, target: str) -> bool:
    chk = an.joint_condition_check(bounds, q, labels=False)
    return chk.verdict_convergent if target == "convergent" else chk.verdict_monotone


def autotune_decentralized(L: NoncausalFir, J_frf: FrfMatrix, target: str = "convergent",
                           order: int = 1, max_rounds: int = 50):
    """Per-loop cut-offs by coordinate ascent on the joint per-frequency criteria.

    Starts from the common cut-off; if that start is not certified by the
    joint criteria it is lowered (still common) until it is. Loops are then
    raised one at a time in index order, each to the largest lattice value
    keeping the joint verdict true, until a full round changes nothing.
    """
    if target not in TARGETS:
        raise InputError(f"unknown target {target!r}")
    ts = J_frf.grid.ts
    omega = J_frf.omega
    n = L.shape[0]
    L_resp = L.response(omega)
    bounds = an.DecentralizedBounds.compute(L_resp, J_frf)
    lo, hi, res = _lattice(ts)
    resp = {}

    def q_of(k):
        if k not in resp:
            resp[k] = ZeroPhaseFilter(k * res, ts, order).response(omega)
        return resp[k]

    def feasible(ks):
        q = np.stack([q_of(k) for k in ks], axis=1)
        return _joint_feasible(bounds, q, target)

    try:
        fc0, _ = autotune_qd(L, J_frf, target, order)
        k0 = int(round(fc0 / res))
    except NoFeasibleCutoff:
        k0 = lo
    lowered = False
    if not feasible([k0] * n):
        lowered = True
        k0 = _bisect_largest(lambda k: feasible([k] * n), lo, k0)
        if k0 is None:
            raise NoFeasibleCutoff("joint criteria cannot be met even at the lowest cut-off")
    ks = [k0] * n
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        changed = False
        for i in range(n):
            def feas_i(k, i=i):
                trial = list(ks)
                trial[i] = k
                return feasible(trial)
            best = _bisect_largest(feas_i, ks[i], hi)
            if best is not None and best > ks[i]:
                ks[i] = best
                changed = True
        if not changed:
            break
    Q = [ZeroPhaseFilter(round(k * res, 10), ts, order) for k in ks]
    design = IlcDesign(L, Q, "alg2", target)
    design.info.update({"start_cutoff": round(k0 * res, 10), "start_lowered": lowered, "rounds": rounds})
    return [q.fc for q in Q], _attach_report(design, L_resp, J_frf, bounds)


def tune_independent(L: NoncausalFir, J_frf: FrfMatrix, order: int = 1) -> list[float]:
    """Each ``q_i`` against the SISO condition ``|q_i (1 - l_i J_ii)| < 1`` alone."""
    L_resp = L.response(J_frf.omega)
    n = L.shape[0]
    LJ = L_resp @ J_frf.data
    out = []
    for i in range(n):
        Mii = np.abs(1 - LJ[:, i, i])
        with np.errstate(divide="ignore"):
            bound = 1.0 / Mii
        out.append(tune_common_cutoff(bound, J_frf.omega, J_frf.grid.ts, order))
    return out


def build_design(mode: str, model: TransferMatrix | None, J_frf: FrfMatrix, K: int = 200,
                 reg: float = 1e-8, target: str = "convergent", order: int = 1,
                 fir_points: int = 8192, L: NoncausalFir | None = None) -> IlcDesign:
    """Run one design pipeline.

    ``naive``: per-loop inverse, each ``q_i`` tuned on its own loop only.
    ``alg1``: per-loop inverse, common ``q_d`` from the exact common-Q test.
    ``alg2``: per-loop inverse, per-loop ``q_i`` from the joint criteria.
    ``alg3``: full MIMO inverse, common ``q_d``.
    """
    if mode not in MODES:
        raise InputError(f"unknown design mode {mode!r}")
    if target not in TARGETS:
        raise InputError(f"unknown target {target!r}")
    if L is None:
        if model is None:
            raise ModelMissing("centralized mode requires full MIMO model" if mode == "alg3"
                               else f"mode {mode} requires diagonal models")
        if model.shape != J_frf.shape:
            raise DimensionMismatch(f"model is {model.shape} but FRF is {J_frf.shape}")
        L = invert_model(model, K, reg, fir_points, per_loop=(mode != "alg3"))
    if mode == "naive":
        fcs = tune_independent(L, J_frf, order)
        d = IlcDesign(L, [ZeroPhaseFilter(fc, J_frf.grid.ts, order) for fc in fcs], mode, target)
        d = _attach_report(d, L.response(J_frf.omega), J_frf)
    elif mode in ("alg1", "alg3"):
        _, d = autotune_qd(L, J_frf, target, order, mode=mode)
    else:
        _, d = autotune_decentralized(L, J_frf, target, order)
    d.info.update({"K": L.K, "reg": reg, "fit_error": L.fit_error})
    return d
