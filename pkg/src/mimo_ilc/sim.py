"""Finite-horizon trial-domain simulation of the learning update.

Signals are ``(N, n)`` arrays (sample index first). Lifted matrices use
channel-major, sample-minor ordering, i.e. ``x.T.ravel()``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.signal as ss
import scipy.sparse.linalg as spla

from .frf import _read_text
from .errors import DimensionMismatch, InputError, NonContractive, UnstableOperator
from .lti import POLE_TOL, TransferMatrix
from .synthesis import IlcDesign, NoncausalFir, ZeroPhaseFilter

DENSE_MAX = 2048
DIVERGENCE_CAP = 1e12
DIVERGENCE_GROWTH = 10.0
SOLVE_RTOL = 1e-10


def _vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float).T.ravel()


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v).reshape(n, -1).T


# -- lifted operators -----------------------------------------------------------


class LiftedOperator:
    """Linear map between ``(N, n_in)`` and ``(N, n_out)`` trial signals."""

    N: int
    n_out: int
    n_in: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N * self.n_out, self.N * self.n_in)

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_T(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        cols = np.eye(self.N * self.n_in)
        return np.column_stack([_vec(self.apply(_unvec(c, self.n_in))) for c in cols])

    def matvec(self, v):
        return _vec(self.apply(_unvec(v, self.n_in)))

    def rmatvec(self, v):
        return _vec(self.apply_T(_unvec(v, self.n_out)))

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.rmatvec, dtype=float)

    @property
    def T(self) -> "LiftedOperator":
        return _Transposed(self)

    def __matmul__(self, other):
        if isinstance(other, LiftedOperator):
            return ProductOperator(self, other)
        return self.apply(other)

    def __add__(self, other):
        return SumOperator(self, other, 1.0)

    def __sub__(self, other):
        return SumOperator(self, other, -1.0)


class ToeplitzOperator(LiftedOperator):
    """Truncated convolution ``y[k] = sum_t h[t] x[k - t + lag0]``.

    ``taps`` has shape ``(n_out, n_in, L)``; tap index ``t`` acts at lag
    ``t - lag0``, so causal systems have ``lag0 = 0``.
    """

    def __init__(self, taps: np.ndarray, N: int, lag0: int = 0):
        taps = np.asarray(taps, dtype=float)
        if taps.ndim != 3:
            raise DimensionMismatch("taps must be (n_out, n_in, L)")
        if N < 1:
            raise InputError("horizon N must be >= 1")
        self.taps = taps
        self.lag0 = int(lag0)
        self.N = int(N)
        self.n_out, self.n_in = taps.shape[:2]

    def apply(self, x):
        x = np.asarray(x, dtype=float).reshape(self.N, self.n_in)
        y = np.zeros((self.N, self.n_out))
        s = self.lag0
        for i in range(self.n_out):
            for j in range(self.n_in):
                h = self.taps[i, j]
                if not h.any():
                    continue
                full = ss.convolve(x[:, j], h)
                seg = full[s:s + self.N]
                y[:len(seg), i] += seg
        return y

    def transposed(self) -> "ToeplitzOperator":
        taps = np.swapaxes(self.taps[:, :, ::-1], 0, 1)
        return ToeplitzOperator(taps, self.N, self.taps.shape[2] - 1 - self.lag0)

    def apply_T(self, y):
        return self.transposed().apply(y)

    @property
    def T(self):
        return self.transposed()

    def dense(self):
        N, s, L = self.N, self.lag0, self.taps.shape[2]
        M = np.zeros((self.n_out * N, self.n_in * N))
        k = np.arange(N)
        for i in range(self.n_out):
            for j in range(self.n_in):
                h = self.taps[i, j]
                col = np.zeros(N)
                row = np.zeros(N)
                idx = k + s
                ok = idx < L
                col[ok] = h[idx[ok]]
                idx = s - k
                ok = idx >= 0
                row[ok] = h[idx[ok]]
                M[i * N:(i + 1) * N, j * N:(j + 1) * N] = sla.toeplitz(col, row)
        return M


class ProductOperator(LiftedOperator):
    """``A @ B``."""

    def __init__(self, A: LiftedOperator, B: LiftedOperator):
        if A.N != B.N or A.n_in != B.n_out:
            raise DimensionMismatch("incompatible lifted operators")
        self.A, self.B = A, B
        self.N, self.n_out, self.n_in = A.N, A.n_out, B.n_in

    def apply(self, x):
        return self.A.apply(self.B.apply(x))

    def apply_T(self, y):
        return self.B.apply_T(self.A.apply_T(y))

    def dense(self):
        return self.A.dense() @ self.B.dense()


class SumOperator(LiftedOperator):
    """``A + sign * B``."""

    def __init__(self, A: LiftedOperator, B: LiftedOperator, sign: float = 1.0):
        if A.shape != B.shape:
            raise DimensionMismatch("incompatible lifted operators")
        self.A, self.B, self.sign = A, B, sign
        self.N, self.n_out, self.n_in = A.N, A.n_out, A.n_in

    def apply(self, x):
        return self.A.apply(x) + self.sign * self.B.apply(x)

    def apply_T(self, y):
        return self.A.apply_T(y) + self.sign * self.B.apply_T(y)

    def dense(self):
        return self.A.dense() + self.sign * self.B.dense()


class IdentityOperator(LiftedOperator):
    def __init__(self, N: int, n: int, scale: float = 1.0):
        self.N, self.n_out, self.n_in = N, n, n
        self.scale = scale

    def apply(self, x):
        return self.scale * np.asarray(x, dtype=float).reshape(self.N, self.n_in)

    apply_T = apply

    def dense(self):
        return self.scale * np.eye(self.N * self.n_in)


class MatrixOperator(LiftedOperator):
    """Explicit lifted matrix."""

    def __init__(self, M: np.ndarray, N: int, n_out: int, n_in: int):
        M = np.asarray(M, dtype=float)
        if M.shape != (N * n_out, N * n_in):
            raise DimensionMismatch(f"matrix shape {M.shape} does not match N={N}, n={n_out}x{n_in}")
        self.M = M
        self.N, self.n_out, self.n_in = N, n_out, n_in

    def apply(self, x):
        return _unvec(self.M @ _vec(x), self.n_out)

    def apply_T(self, y):
        return _unvec(self.M.T @ _vec(y), self.n_in)

    def dense(self):
        return self.M


class _Transposed(LiftedOperator):
    def __init__(self, op: LiftedOperator):
        self.op = op
        self.N, self.n_out, self.n_in = op.N, op.n_in, op.n_out

    def apply(self, x):
        return self.op.apply_T(x)

    def apply_T(self, y):
        return self.op.apply(y)

    def dense(self):
        return self.op.dense().T


def _zero_phase_lift(filters, N: int) -> LiftedOperator:
    n = len(filters)
    taps = np.zeros((n, n, N))
    for i, f in enumerate(filters):
        taps[i, i] = f.prototype_impulse(N)
    P = ToeplitzOperator(taps, N)
    return ProductOperator(P.T, P)


def lift(op, N: int) -> LiftedOperator:
    """Finite-horizon operator with zero initial conditions and zero padding.

    Accepts a stable ``TransferMatrix``, a ``NoncausalFir``, a zero-phase
    filter or a sequence of them (applied forward then backward, per channel),
    or a square ``(n, n)`` constant matrix.
    """
    if N < 1:
        raise InputError("horizon N must be >= 1")
    if isinstance(op, TransferMatrix):
        p = op.poles
        if p.size and np.max(np.abs(p)) >= 1 - POLE_TOL:
            raise UnstableOperator(f"cannot lift: pole with |p| = {np.max(np.abs(p)):.6g}")
        h = op.impulse(N)
        return ToeplitzOperator(np.moveaxis(h, 0, -1), N)
    if isinstance(op, NoncausalFir):
        return ToeplitzOperator(op.taps, N, op.K)
    if isinstance(op, ZeroPhaseFilter):
        return _zero_phase_lift([op], N)
    if isinstance(op, (list, tuple)) and all(isinstance(f, ZeroPhaseFilter) for f in op):
        return _zero_phase_lift(op, N)
    M = np.atleast_2d(np.asarray(op, dtype=float))
    if M.ndim == 2 and M.shape[0] == M.shape[1]:
        return ToeplitzOperator(M[:, :, None], N)
    raise InputError(f"cannot lift object of type {type(op).__name__}")


def lift_design(design: IlcDesign, N: int) -> tuple[LiftedOperator, LiftedOperator]:
    """Lifted ``(L, Q)`` of a design."""
    return lift(design.L, N), lift(list(design.Q), N)


def _design_ops(design, N):
    if isinstance(design, IlcDesign):
        return lift_design(design, N)
    L_op, Q_op = design
    return L_op, Q_op


def iteration_operator(L_op, Q_op, J_op) -> LiftedOperator:
    """Lifted ``Q (I - L J)``."""
    n = J_op.n_in
    return ProductOperator(Q_op, IdentityOperator(J_op.N, n) - ProductOperator(L_op, J_op))


def _use_dense(op: LiftedOperator) -> bool:
    return op.N * op.n_in <= DENSE_MAX


def lifted_gamma(M_op: LiftedOperator) -> float:
    """Largest singular value of the lifted iteration matrix."""
    if _use_dense(M_op):
        return float(np.linalg.norm(M_op.dense(), 2))
    lin = M_op.as_linear_operator()
    v0 = np.ones(lin.shape[1]) / np.sqrt(lin.shape[1])
    s = spla.svds(lin, k=1, return_singular_vectors=False, v0=v0, tol=1e-10)
    return float(s[0])


def lifted_spectral_radius(M_op: LiftedOperator) -> float:
    if _use_dense(M_op):
        return float(np.max(np.abs(np.linalg.eigvals(M_op.dense()))))
    lin = M_op.as_linear_operator()
    v0 = np.ones(lin.shape[1]) / np.sqrt(lin.shape[1])
    lam = spla.eigs(lin, k=1, which="LM", return_eigenvectors=False, v0=v0, tol=1e-6,
                    ncv=min(40, lin.shape[0] - 2), maxiter=5000)
    return float(np.abs(lam[0]))


# -- trials ---------------------------------------------------------------------


@dataclass(eq=False)
class TrialRecord:
    trial: int
    e: np.ndarray
    f: np.ndarray
    e_norm: float
    f_dist: float = float("nan")
    diverged: bool = False


def run_trials(design, S_op: LiftedOperator, J_op: LiftedOperator, r: np.ndarray, trials: int,
               f0: np.ndarray | None = None, f_inf: np.ndarray | None = None) -> list[TrialRecord]:
    """Iterate ``e_j = S r - J f_j``, ``f_{j+1} = Q (f_j + L e_j)`` for ``j = 0..trials-1``.

    ``design`` is an ``IlcDesign`` or a pair of lifted ``(L, Q)``. A run is
    flagged divergent once ``||e_j||_F`` exceeds ten times the smallest
    earlier norm, and stopped when it exceeds 1e12.
    """
    N = J_op.N
    n = J_op.n_in
    L_op, Q_op = _design_ops(design, N)
    r = np.asarray(r, dtype=float).reshape(N, -1)
    if r.shape[1] != S_op.n_in:
        raise DimensionMismatch(f"reference has {r.shape[1]} channels, S expects {S_op.n_in}")
    f = np.zeros((N, n)) if f0 is None else np.asarray(f0, dtype=float).reshape(N, n).copy()
    Sr = S_op.apply(r)
    out = []
    best = np.inf
    diverged = False
    for j in range(trials):
        e = Sr - J_op.apply(f)
        en = float(np.sqrt(np.sum(e * e)))
        if not np.isfinite(en) or en > DIVERGENCE_GROWTH * best:
            diverged = True
        best = min(best, en)
        fd = float(np.linalg.norm(f_inf - f)) if f_inf is not None else float("nan")
        out.append(TrialRecord(j, e, f, en, fd, diverged))
        if not np.isfinite(en) or en > DIVERGENCE_CAP:
            break
        f = Q_op.apply(f + L_op.apply(e))
    return out


@dataclass(eq=False)
class FixedPoint:
    f: np.ndarray
    e: np.ndarray
    gamma: float
    residual: float


def fixed_points(design, S_op: LiftedOperator, J_op: LiftedOperator, r: np.ndarray,
                 gamma: float | None = None) -> FixedPoint:
    """Solve ``(I - Q (I - L J)) f = Q L S r`` and ``e = S r - J f`` on the horizon."""
    N = J_op.N
    n = J_op.n_in
    L_op, Q_op = _design_ops(design, N)
    M_op = iteration_operator(L_op, Q_op, J_op)
    dense = _use_dense(M_op)
    M = M_op.dense() if dense else None
    if gamma is None:
        gamma = float(np.linalg.norm(M, 2)) if dense else lifted_gamma(M_op)
    if gamma >= 1:
        rho = float(np.max(np.abs(np.linalg.eigvals(M)))) if dense else lifted_spectral_radius(M_op)
        if rho >= 1 - POLE_TOL:
            raise NonContractive(f"lifted iteration matrix has spectral radius {rho:.6g} >= 1")
    r = np.asarray(r, dtype=float).reshape(N, -1)
    Sr = S_op.apply(r)
    b = _vec(Q_op.apply(L_op.apply(Sr)))
    if dense:
        A = np.eye(M.shape[0]) - M
        x = np.linalg.solve(A, b)
        res_vec = A @ x - b
    else:
        lin = (IdentityOperator(N, n) - M_op).as_linear_operator()
        x, info = spla.gmres(lin, b, rtol=1e-13, atol=0.0, restart=200, maxiter=200)
        res_vec = lin.matvec(x) - b
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(res_vec) / nb) if nb > 0 else float(np.linalg.norm(res_vec))
    if res > SOLVE_RTOL:
        raise NonContractive(f"fixed-point solve residual {res:.3g} exceeds {SOLVE_RTOL:g}")
    f = _unvec(x, n)
    return FixedPoint(f, Sr - J_op.apply(f), float(gamma), res)


@dataclass(eq=False)
class MonotonicityAudit:
    ratios: np.ndarray
    gamma: float
    monotone: bool


def monotonicity_audit(records: list[TrialRecord], f_inf: np.ndarray, gamma: float,
                       tol: float = 1e-6) -> MonotonicityAudit:
    """Per-trial contraction ratios of ``||f_inf - f_j||``.

    Monotone when every ratio is below one and at most ``gamma + tol``.
    Trials whose distance is below 1e-12 are skipped.
    """
    d = np.array([np.linalg.norm(f_inf - rec.f) for rec in records])
    ratios = []
    for a, b in zip(d[:-1], d[1:]):
        if a >= 1e-12:
            ratios.append(b / a)
    ratios = np.array(ratios)
    ok = bool(np.all(ratios <= gamma + tol) and np.all(ratios < 1))
    return MonotonicityAudit(ratios, float(gamma), ok)


# -- export ---------------------------------------------------------------------


def _csv_text(header: list[str], rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def trials_csv(records: list[TrialRecord], path=None, comments=()) -> str:
    rows = [(r.trial, r.e_norm, r.f_dist, str(r.diverged).lower()) for r in records]
    text = _csv_text(["trial", "e_norm_F", "f_dist_to_fixed", "diverged"], rows, comments)
    if path is not None:
        Path(path).write_text(text)
    return text


def signals_csv(record: TrialRecord, path=None, comments=()) -> str:
    n = record.e.shape[1]
    header = ["k"] + [f"e_{i + 1}" for i in range(n)] + [f"f_{i + 1}" for i in range(n)]
    data = np.hstack([record.e, record.f])
    rows = ([k] + list(row) for k, row in enumerate(data))
    text = _csv_text(header, rows, comments)
    if path is not None:
        Path(path).write_text(text)
    return text


def read_trials_csv(path_or_text) -> list[dict]:
    lines = [ln for ln in _read_text(path_or_text).splitlines() if ln and not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append({
            "trial": int(row["trial"]),
            "e_norm_F": float(row["e_norm_F"]),
            "f_dist_to_fixed": float(row["f_dist_to_fixed"]),
            "diverged": row["diverged"] == "true",
        })
    return out


def read_signals_csv(path_or_text) -> tuple[np.ndarray, np.ndarray]:
    lines = [ln for ln in _read_text(path_or_text).splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    n = (len(header) - 1) // 2
    return data[:, 1:1 + n], data[:, 1 + n:]
