"""Discrete-time LTI systems: rational transfer functions, transfer matrices,
state-space realizations, feedback interconnection and ZOH discretization.

Numerics go through state-space realizations wherever possible. Coefficient
polynomials of closed loops sampled at 1 kHz have roots clustered around
``z = 1`` and lose all accuracy when evaluated near that point; resolvent
evaluation ``C (zI - A)^-1 B + D`` does not.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.signal as ss

from .errors import (DimensionMismatch, InputError, PoleOnGrid, RankDeficient,
                     SingularReturnDifference, UnstableClosedLoop)
from .frf import FrequencyGrid, FrfMatrix, _read_text

POLE_TOL = 1e-9          # |p| >= 1 - POLE_TOL counts as unstable
CANCEL_TOL = 1e-6        # root matching when pruning common factors


def _trim(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.flatnonzero(c != 0)
    return c[nz[0]:] if nz.size else np.zeros(1)


@dataclass(frozen=True, eq=False)
class RationalTransfer:
    """SISO ``num(z)/den(z)``, coefficients in descending powers of ``z``."""

    num: np.ndarray
    den: np.ndarray
    ts: float

    def __post_init__(self):
        num = _trim(self.num)
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        if den.size == 0 or den[0] == 0:
            raise InputError("leading denominator coefficient must be nonzero")
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise InputError("transfer function coefficients must be finite")
        if not self.ts > 0:
            raise InputError(f"sample time must be positive, got {self.ts!r}")
        num.setflags(write=False)
        den.setflags(write=False)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "ts", float(self.ts))

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.num == 0))

    @property
    def causal(self) -> bool:
        return self.is_zero or self.num.size <= self.den.size

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return np.polyval(self.num, z) / np.polyval(self.den, z)

    @property
    def zeros(self) -> np.ndarray:
        return np.roots(self.num) if not self.is_zero else np.zeros(0)

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    @classmethod
    def from_zpk(cls, zeros, poles, gain, ts) -> "RationalTransfer":
        num = gain * np.real_if_close(np.poly(zeros), tol=1e6) if len(zeros) else np.array([gain])
        den = np.real_if_close(np.poly(poles), tol=1e6) if len(poles) else np.array([1.0])
        return cls(np.real(num), np.real(den), ts)

    def to_state_space(self) -> "StateSpace":
        if not self.causal:
            raise InputError("non-causal rational entry has no state-space realization")
        if self.is_zero:
            return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                              np.zeros((1, 1)), self.ts)
        num = np.concatenate([np.zeros(self.den.size - self.num.size), self.num])
        with warnings.catch_warnings():
            # leading zeros in the padded numerator are intended
            warnings.simplefilter("ignore", ss.BadCoefficients)
            A, B, C, D = ss.tf2ss(num, self.den)
        return StateSpace(A, B, C, D, self.ts)

    def to_dict(self) -> dict:
        return {"num": self.num.tolist(), "den": self.den.tolist()}


@dataclass(frozen=True, eq=False)
class StateSpace:
    """``x+ = A x + B u, y = C x + D u``; ``ts=None`` marks continuous time."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    ts: float | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float)) if np.size(self.A) else np.zeros((0, 0))
        nx = A.shape[0]
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if A.shape != (nx, nx):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        ny, nu = D.shape
        if B.size != nx * nu or C.size != ny * nx:
            raise DimensionMismatch(f"B {B.shape} and C {C.shape} do not fit A {A.shape} and D {D.shape}")
        B = B.reshape(nx, nu)
        C = C.reshape(ny, nx)
        if self.ts is not None and not self.ts > 0:
            raise InputError(f"sample time must be positive, got {self.ts!r}")
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def continuous(self) -> bool:
        return self.ts is None

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.D.shape

    @property
    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A) if self.nx else np.zeros(0, complex)

    def response(self, z) -> np.ndarray:
        """``C (zI - A)^-1 B + D`` for each point in ``z``; returns ``(K, ny, nu)``."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        ny, nu = self.shape
        out = np.broadcast_to(self.D.astype(complex), (z.size, ny, nu)).copy()
        if self.nx:
            eye = np.eye(self.nx)
            M = z[:, None, None] * eye - self.A
            X = np.linalg.solve(M, np.broadcast_to(self.B, (z.size,) + self.B.shape))
            out += self.C @ X
        return out

    def impulse(self, N: int) -> np.ndarray:
        """Markov parameters ``h[0..N-1]`` as ``(N, ny, nu)``; ``h[0] = D``."""
        ny, nu = self.shape
        h = np.zeros((N, ny, nu))
        if N == 0:
            return h
        h[0] = self.D
        if self.nx:
            X = self.B.copy()
            for k in range(1, N):
                h[k] = self.C @ X
                X = self.A @ X
        return h

    def simulate(self, u: np.ndarray) -> np.ndarray:
        """Zero-initial-state response to ``u`` of shape ``(N, nu)``."""
        u = np.asarray(u, dtype=float).reshape(len(u), -1)
        y = u @ self.D.T
        if self.nx:
            x = np.zeros(self.nx)
            for k in range(len(u)):
                y[k] += self.C @ x
                x = self.A @ x + self.B @ u[k]
        return y

    def __matmul__(self, T):
        """Static right multiplication ``H(z) @ T``."""
        T = np.atleast_2d(np.asarray(T, dtype=float))
        return StateSpace(self.A, self.B @ T, self.C, self.D @ T, self.ts)

    def __rmatmul__(self, T):
        T = np.atleast_2d(np.asarray(T, dtype=float))
        return StateSpace(self.A, self.B, T @ self.C, T @ self.D, self.ts)

    def select(self, rows, cols) -> "StateSpace":
        return StateSpace(self.A, self.B[:, cols], self.C[rows, :], self.D[np.ix_(rows, cols)], self.ts)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in "ABCD"} | {"ts": self.ts}

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpace":
        nx = len(d["A"])
        ny, nu = np.shape(d["D"])
        return cls(np.reshape(d["A"], (nx, nx)), np.reshape(d["B"], (nx, nu)),
                   np.reshape(d["C"], (ny, nx)), d["D"], d.get("ts"))


def block_diag_ss(systems: Sequence[StateSpace]) -> StateSpace:
    ts = systems[0].ts
    return StateSpace(sla.block_diag(*[s.A for s in systems]) if sum(s.nx for s in systems) else np.zeros((0, 0)),
                      sla.block_diag(*[s.B for s in systems]),
                      sla.block_diag(*[s.C for s in systems]),
                      sla.block_diag(*[s.D for s in systems]), ts)


class TransmissionZero(NamedTuple):
    value: complex
    nonminimum_phase: bool


class TransferMatrix:
    """``ny x nu`` matrix of discrete rational entries sharing one sample time.

    Built either from entries or from a state-space realization. When a
    realization is present it is the numerical source of truth (frequency
    response, impulse response, interconnections); entries are derived
    from it on demand for reporting and serialization.
    """

    def __init__(self, entries=None, ts: float | None = None, realization: StateSpace | None = None):
        if entries is None and realization is None:
            raise InputError("TransferMatrix needs entries or a realization")
        if realization is not None:
            if realization.continuous:
                raise InputError("TransferMatrix realization must be discrete-time")
            ts = realization.ts if ts is None else ts
            if not np.isclose(ts, realization.ts):
                raise InputError("realization sample time differs from ts")
        if entries is not None:
            rows = [list(r) for r in entries]
            if not rows or not rows[0]:
                raise DimensionMismatch("TransferMatrix needs n_y >= 1 and n_u >= 1")
            if any(len(r) != len(rows[0]) for r in rows):
                raise DimensionMismatch("ragged TransferMatrix entry grid")
            ts = rows[0][0].ts if ts is None else ts
            for i, r in enumerate(rows):
                for k, e in enumerate(r):
                    if not np.isclose(e.ts, ts):
                        raise InputError(f"entry ({i + 1},{k + 1}) has Ts={e.ts}, expected {ts}")
            self._entries = tuple(tuple(r) for r in rows)
            shape = (len(rows), len(rows[0]))
        else:
            self._entries = None
            shape = realization.shape
        if realization is not None and realization.shape != shape:
            raise DimensionMismatch("realization and entries disagree in dimensions")
        self.ts = float(ts)
        self.shape = shape
        self._realization = realization

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_state_space(cls, sys: StateSpace) -> "TransferMatrix":
        return cls(realization=sys)

    @classmethod
    def diagonal(cls, entries: Sequence[RationalTransfer]) -> "TransferMatrix":
        n = len(entries)
        ts = entries[0].ts
        zero = RationalTransfer([0.0], [1.0], ts)
        return cls([[entries[i] if i == k else zero for k in range(n)] for i in range(n)], ts)

    @classmethod
    def identity(cls, n: int, ts: float) -> "TransferMatrix":
        return cls.diagonal([RationalTransfer([1.0], [1.0], ts)] * n)

    @classmethod
    def static(cls, K, ts: float) -> "TransferMatrix":
        K = np.atleast_2d(np.asarray(K, dtype=float))
        return cls([[RationalTransfer([v], [1.0], ts) for v in row] for row in K], ts)

    # -- structure ------------------------------------------------------

    @property
    def ny(self) -> int:
        return self.shape[0]

    @property
    def nu(self) -> int:
        return self.shape[1]

    @property
    def has_realization(self) -> bool:
        return self._realization is not None

    @cached_property
    def entries(self) -> tuple[tuple[RationalTransfer, ...], ...]:
        if self._entries is not None:
            return self._entries
        sys = self._realization
        return tuple(tuple(_siso_entry(sys, i, k) for k in range(self.nu)) for i in range(self.ny))

    def __getitem__(self, idx) -> RationalTransfer:
        i, k = idx
        return self.entries[i][k]

    @cached_property
    def _state_space(self) -> StateSpace:
        if self._realization is not None:
            return self._realization
        ny, nu = self.shape
        blocks = []
        for i in range(ny):
            for k in range(nu):
                e = self._entries[i][k]
                if not e.causal:
                    raise InputError(f"entry ({i + 1},{k + 1}) is non-causal")
                s = e.to_state_space()
                Bk = np.zeros((s.nx, nu))
                Bk[:, k] = s.B[:, 0]
                Ci = np.zeros((ny, s.nx))
                Ci[i, :] = s.C[0, :]
                Dik = np.zeros((ny, nu))
                Dik[i, k] = s.D[0, 0]
                blocks.append((s.A, Bk, Ci, Dik))
        nx = sum(b[0].shape[0] for b in blocks)
        A = sla.block_diag(*[b[0] for b in blocks]) if nx else np.zeros((0, 0))
        B = np.vstack([b[1] for b in blocks]) if nx else np.zeros((0, nu))
        C = np.hstack([b[2] for b in blocks]) if nx else np.zeros((ny, 0))
        D = sum(b[3] for b in blocks)
        return StateSpace(A, B, C, D, self.ts)

    def to_state_space(self) -> StateSpace:
        return self._state_space

    @property
    def poles(self) -> np.ndarray:
        return self.to_state_space().poles

    # -- evaluation -----------------------------------------------------

    def response(self, omega) -> np.ndarray:
        """Raw frequency response at arbitrary ``omega`` (rad/sample), ``(K, ny, nu)``."""
        z = np.exp(1j * np.atleast_1d(np.asarray(omega, dtype=float)))
        return self.at(z)

    def at(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self._realization is not None or self._is_high_order():
            return self.to_state_space().response(z)
        out = np.empty((z.size,) + self.shape, complex)
        for i, row in enumerate(self.entries):
            for k, e in enumerate(row):
                out[:, i, k] = e(z)
        return out

    def _is_high_order(self) -> bool:
        return max(e.den.size for r in self.entries for e in r) > 4

    def impulse(self, N: int) -> np.ndarray:
        return self.to_state_space().impulse(N)

    # -- algebra --------------------------------------------------------

    def __matmul__(self, other):
        if isinstance(other, TransferMatrix):
            return TransferMatrix.from_state_space(series(self.to_state_space(), other.to_state_space()))
        return TransferMatrix.from_state_space(self.to_state_space() @ np.asarray(other, float))

    def __rmatmul__(self, other):
        return TransferMatrix.from_state_space(np.asarray(other, float) @ self.to_state_space())

    def diag(self) -> "TransferMatrix":
        """Diagonal part ``diag{H_ii}`` (square only)."""
        if self.ny != self.nu:
            raise DimensionMismatch("diag() needs a square transfer matrix")
        if self._realization is None:
            return TransferMatrix.diagonal([self._entries[i][i] for i in range(self.ny)])
        sys = self._realization
        parts = [sys.select([i], [i]) for i in range(self.ny)]
        return TransferMatrix.from_state_space(block_diag_ss(parts))

    # -- serialization --------------------------------------------------

    def to_dict(self, include_realization: bool = True) -> dict:
        d = {
            "ts": self.ts,
            "ny": self.ny,
            "nu": self.nu,
            "entries": [[e.to_dict() for e in row] for row in self.entries],
        }
        if include_realization and self._realization is not None:
            d["ss"] = self._realization.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TransferMatrix":
        try:
            ts = float(d["ts"])
        except (KeyError, TypeError, ValueError):
            raise InputError("transfer matrix JSON needs a numeric 'ts'") from None
        if "ss" in d:
            sysd = dict(d["ss"])
            sysd["ts"] = ts
            tm = cls(realization=StateSpace.from_dict(sysd))
        else:
            if "entries" not in d:
                raise InputError("transfer matrix JSON needs 'entries'")
            rows = []
            for i, row in enumerate(d["entries"]):
                r = []
                for k, e in enumerate(row):
                    try:
                        r.append(RationalTransfer(e["num"], e["den"], ts))
                    except (KeyError, TypeError) as exc:
                        raise InputError(f"entry ({i + 1},{k + 1}) malformed: {exc}") from None
                    except InputError as exc:
                        raise InputError(f"entry ({i + 1},{k + 1}): {exc}") from None
                rows.append(r)
            tm = cls(rows, ts)
        for key in ("ny", "nu"):
            if key in d and int(d[key]) != getattr(tm, key):
                raise DimensionMismatch(f"declared {key}={d[key]} but entries give {getattr(tm, key)}")
        return tm

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path_or_text) -> "TransferMatrix":
        try:
            d = json.loads(_read_text(path_or_text))
        except json.JSONDecodeError as exc:
            raise InputError(f"transfer matrix JSON does not parse: {exc}") from None
        return cls.from_dict(d)


def _siso_entry(sys: StateSpace, i: int, k: int) -> RationalTransfer:
    """Rational entry (i, k) of a realization via invariant zeros and poles."""
    sub = sys.select([i], [k])
    h = sub.impulse(min(4 * sub.nx + 2, 400)) if sub.nx else sub.D[None]
    scale = np.max(np.abs(sys.impulse(8))) if sys.nx else np.max(np.abs(sys.D))
    if np.max(np.abs(h)) <= 1e-14 * max(scale, 1e-300):
        return RationalTransfer([0.0], [1.0], sys.ts)
    if sub.nx == 0:
        return RationalTransfer([sub.D[0, 0]], [1.0], sys.ts)
    poles = list(sub.poles)
    zeros = list(_invariant_zeros(sub))
    # cancel common factors (uncontrollable / unobservable modes)
    kept_z = []
    for zz in zeros:
        j = _match(zz, poles)
        if j is None:
            kept_z.append(zz)
        else:
            poles.pop(j)
    z0 = 1.7 + 0.9j
    val = sub.response(z0)[0, 0, 0]
    gain = val * np.prod([z0 - p for p in poles]) / np.prod([z0 - z for z in kept_z])
    return RationalTransfer.from_zpk(_conj_clean(kept_z), _conj_clean(poles), float(np.real(gain)), sys.ts)


def _match(x, pool, tol=CANCEL_TOL):
    if not pool:
        return None
    d = np.abs(np.asarray(pool) - x)
    j = int(np.argmin(d))
    return j if d[j] <= tol * max(1.0, abs(x)) else None


def _conj_clean(roots):
    roots = np.asarray(roots, dtype=complex)
    roots = np.where(np.abs(roots.imag) < 1e-12 * np.maximum(1, np.abs(roots)), roots.real, roots)
    return roots


def _invariant_zeros(sys: StateSpace) -> np.ndarray:
    """Finite generalized eigenvalues of the Rosenbrock pencil (square systems)."""
    nx = sys.nx
    ny, nu = sys.shape
    if nx == 0:
        return np.zeros(0, complex)
    P = np.block([[sys.A, sys.B], [sys.C, sys.D]])
    Q = np.zeros_like(P)
    Q[:nx, :nx] = np.eye(nx)
    w = sla.eigvals(P, Q, homogeneous_eigvals=True)
    alpha, beta = w
    finite = np.abs(beta) > 1e-10 * np.maximum(np.abs(alpha), 1e-300)
    finite &= np.abs(beta) > 1e-13
    return alpha[finite] / beta[finite]


# -- operations -------------------------------------------------------------


def evaluate_frf(sys: TransferMatrix, grid: FrequencyGrid, tol: float = 1e-9) -> FrfMatrix:
    """Sample ``sys`` at ``z = exp(i omega)`` for every grid frequency."""
    if not np.isclose(grid.ts, sys.ts):
        raise InputError(f"grid Ts={grid.ts} differs from system Ts={sys.ts}")
    z = np.exp(1j * grid.omega)
    if sys.has_realization or sys._is_high_order():
        p = sys.poles
        if p.size:
            dist = np.min(np.abs(z[:, None] - p[None, :]), axis=1)
            k = int(np.argmin(dist))
            if dist[k] < tol:
                raise PoleOnGrid(f"pole on the unit circle at omega={grid.omega[k]:.6g} rad/sample")
    else:
        for i, row in enumerate(sys.entries):
            for kk, e in enumerate(row):
                d = np.abs(np.polyval(e.den, z))
                k = int(np.argmin(d))
                if d[k] < tol * np.sum(np.abs(e.den)):
                    raise PoleOnGrid(f"entry ({i + 1},{kk + 1}) has a pole at omega={grid.omega[k]:.6g}")
    return FrfMatrix(grid, sys.at(z))


def series(first: StateSpace, second: StateSpace) -> StateSpace:
    """Realization of ``first(z) @ second(z)`` (``second`` acts on the input first)."""
    if first.shape[1] != second.shape[0]:
        raise DimensionMismatch(f"cannot multiply {first.shape} by {second.shape}")
    A1, B1, C1, D1 = first.A, first.B, first.C, first.D
    A2, B2, C2, D2 = second.A, second.B, second.C, second.D
    n1, n2 = first.nx, second.nx
    A = np.block([[A2, np.zeros((n2, n1))], [B1 @ C2, A1]])
    B = np.vstack([B2, B1 @ D2])
    C = np.hstack([D1 @ C2, C1])
    return StateSpace(A, B, C, D1 @ D2, first.ts)


def closed_loop_maps(G: TransferMatrix, C: TransferMatrix,
                     tol: float = POLE_TOL) -> tuple[TransferMatrix, TransferMatrix]:
    """Sensitivity ``S = (I + G C)^-1`` and process sensitivity ``J = S G``.

    The loop is ``u = C e + f``, ``e = r - y``, ``y = G u``, so that
    ``e = S r - J f``. Internal stability is checked on the full
    closed-loop state matrix.
    """
    if G.nu != C.ny or G.ny != C.nu:
        raise DimensionMismatch(f"G is {G.shape} but C is {C.shape}")
    if not np.isclose(G.ts, C.ts):
        raise InputError("G and C have different sample times")
    g = G.to_state_space()
    c = C.to_state_space()
    ny, nu = G.shape
    Ig = np.eye(ny)
    ret = Ig + g.D @ c.D
    if np.linalg.cond(ret) > 1e12:
        raise SingularReturnDifference("I + D_G D_C is singular (ill-posed algebraic loop)")
    probe = np.exp(1j * np.array([0.37, 1.21, 2.53]))
    dets = [abs(np.linalg.det(Ig + G.at(zz)[0] @ C.at(zz)[0])) for zz in probe]
    if max(dets) < 1e-12:
        raise SingularReturnDifference("det(I + G C) vanishes identically")
    R = np.linalg.inv(ret)
    ng, nc = g.nx, c.nx
    # y = Cy x + Dyr r + Dyf f
    Cy = R @ np.hstack([g.C, g.D @ c.C])
    Dyr = R @ g.D @ c.D
    Dyf = R @ g.D
    Ce, Der, Def = -Cy, Ig - Dyr, -Dyf
    Cu = np.hstack([np.zeros((nu, ng)), c.C]) + c.D @ Ce
    Dur, Duf = c.D @ Der, c.D @ Def + np.eye(nu)
    A = np.block([[g.A, np.zeros((ng, nc))], [np.zeros((nc, ng)), c.A]])
    A = A + np.vstack([g.B @ Cu, c.B @ Ce])
    Br = np.vstack([g.B @ Dur, c.B @ Der])
    Bf = np.vstack([g.B @ Duf, c.B @ Def])
    p = np.linalg.eigvals(A) if A.size else np.zeros(0)
    if p.size and np.max(np.abs(p)) >= 1 - tol:
        raise UnstableClosedLoop(f"closed-loop pole with |p| = {np.max(np.abs(p)):.12g} >= 1")
    S = StateSpace(A, Br, Ce, Der, G.ts)
    J = StateSpace(A, Bf, Cy, Dyf, G.ts)
    return TransferMatrix.from_state_space(S), TransferMatrix.from_state_space(J)


def zoh_discretize(sys: StateSpace, ts: float) -> StateSpace:
    """Zero-order-hold equivalent via one augmented matrix exponential."""
    if not ts > 0:
        raise InputError(f"sample time must be positive, got {ts!r}")
    if not sys.continuous:
        raise InputError("zoh_discretize expects a continuous-time system")
    nx = sys.nx
    nu = sys.shape[1]
    M = np.zeros((nx + nu, nx + nu))
    M[:nx, :nx] = sys.A
    M[:nx, nx:] = sys.B
    E = sla.expm(M * ts)
    return StateSpace(E[:nx, :nx], E[:nx, nx:], sys.C, sys.D, ts)


def _normal_rank_full(sys: TransferMatrix) -> bool:
    probe = np.exp(1j * np.array([0.31, 0.97, 1.83, 2.71])) * 1.05
    H = sys.at(probe)
    s = np.linalg.svd(H, compute_uv=False)
    return bool(np.any(s[:, -1] > 1e-10 * np.maximum(s[:, 0], 1e-300)))


def transmission_zeros(sys: TransferMatrix) -> list[TransmissionZero]:
    """Finite transmission zeros, each tagged non-minimum-phase when ``|z| >= 1``.

    Invariant zeros of the realization minus input/output decoupling zeros
    (eigenvalues failing the PBH rank test).
    """
    if sys.ny != sys.nu:
        raise DimensionMismatch("transmission_zeros needs a square system")
    if not _normal_rank_full(sys):
        raise RankDeficient("transfer matrix determinant vanishes identically")
    r = sys.to_state_space()
    zs = _invariant_zeros(r)
    n = r.nx
    out = []
    for z in zs:
        if n:
            Az = r.A - z * np.eye(n)
            sc = max(1.0, np.linalg.norm(r.A))
            ctrb = np.linalg.svd(np.hstack([Az, r.B]), compute_uv=False)[-1]
            obsv = np.linalg.svd(np.vstack([Az, r.C]), compute_uv=False)[-1]
            if min(ctrb, obsv) < 1e-8 * sc:
                continue
        z = complex(z)
        if abs(z.imag) < 1e-12 * max(1.0, abs(z)):
            z = complex(z.real, 0.0)
        out.append(TransmissionZero(z, abs(z) >= 1.0))
    out.sort(key=lambda t: (abs(t.value), t.value.real, t.value.imag))
    return out
