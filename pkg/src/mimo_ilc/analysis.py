"""Convergence and robustness criteria for the update ``f+ = Q (f + L e)``.

All checks are pointwise in frequency on a finite grid. Quantities are
stacked as ``(K, n, n)`` arrays so every criterion is evaluated in one
vectorized pass; reductions over the grid use numpy's fixed order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroDiagonalM
from .frf import FrequencyGrid, FrfMatrix, normalized_interaction

STRICT = 1e-9            # "< 1" is implemented as "<= 1 - STRICT"
MU_MAX_ITER = 200
MU_REL_TOL = 1e-8

CONV_CRITERIA = ("Eq20", "Eq21", "Eq24")
MONO_CRITERIA = ("Eq22", "Eq25")


def _stack(x, K: int | None = None, name: str = "response") -> np.ndarray:
    """Accept an FrfMatrix, a (K, n, n) array, or a (K, n) diagonal."""
    if isinstance(x, FrfMatrix):
        x = x.data
    x = np.asarray(x, dtype=complex)
    if x.ndim == 2:
        x = x[:, :, None] * np.eye(x.shape[1])[None]
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise DimensionMismatch(f"{name} must be a stack of square matrices, got {x.shape}")
    if K is not None and x.shape[0] != K:
        raise DimensionMismatch(f"{name} has {x.shape[0]} frequencies, expected {K}")
    return x


def spectral_radius(A: np.ndarray) -> np.ndarray:
    return np.max(np.abs(np.linalg.eigvals(A)), axis=-1)


def max_singular_value(A: np.ndarray) -> np.ndarray:
    return np.linalg.svd(A, compute_uv=False)[..., 0]


def _holds(lhs, rhs):
    return lhs <= (1 - STRICT) * rhs


# -- factorization ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IterationFactors:
    """``M = I - L J = M_d (I + E)`` per frequency."""

    omega: np.ndarray
    M: np.ndarray
    Md: np.ndarray      # (K, n) diagonal of M
    E: np.ndarray

    @property
    def n(self) -> int:
        return self.M.shape[-1]

    @property
    def I_plus_E(self) -> np.ndarray:
        return self.E + np.eye(self.n)


def factorize(L_resp, J_frf: FrfMatrix) -> IterationFactors:
    J = _stack(J_frf, name="J")
    L = _stack(L_resp, J.shape[0], name="L")
    if L.shape != J.shape:
        raise DimensionMismatch(f"L is {L.shape[1:]} but J is {J.shape[1:]}")
    n = J.shape[-1]
    M = np.eye(n) - L @ J
    Md = np.diagonal(M, axis1=1, axis2=2).copy()
    bad = np.abs(Md) <= 1e-15
    if np.any(bad):
        k, i = np.argwhere(bad)[0]
        raise ZeroDiagonalM(
            f"M_{i + 1}{i + 1} = 1 - (LJ)_{i + 1}{i + 1} vanishes at grid index {k}; "
            "interaction normalization undefined")
    E = normalized_interaction(M)
    omega = J_frf.omega if isinstance(J_frf, FrfMatrix) else np.arange(J.shape[0], dtype=float)
    return IterationFactors(np.asarray(omega), M, Md, E)


# -- full-matrix convergence tests and the common-Q bound --------------------


def iteration_matrix(Q_resp, L_resp, J_frf) -> np.ndarray:
    J = _stack(J_frf, name="J")
    L = _stack(L_resp, J.shape[0], name="L")
    Q = _stack(Q_resp, J.shape[0], name="Q")
    n = J.shape[-1]
    return Q @ (np.eye(n) - L @ J)


def check_convergence_thm1(Q_resp, L_resp, J_frf):
    """Per-frequency ``rho(Q (I - L J))`` and the verdict ``all < 1``."""
    rho = spectral_radius(iteration_matrix(Q_resp, L_resp, J_frf))
    return rho, bool(np.all(_holds(rho, 1.0)))


def check_monotonic_thm2(Q_resp, L_resp, J_frf):
    """``gamma = max sigma_max(Q (I - L J))`` over the grid, verdict ``gamma < 1``."""
    sig = max_singular_value(iteration_matrix(Q_resp, L_resp, J_frf))
    gamma = float(np.max(sig))
    return gamma, bool(_holds(gamma, 1.0)), sig


def qd_feasible_bound(L_resp, J_frf):
    """Largest admissible ``|q_d|`` per frequency for ``Q = q_d I``.

    Returns ``(1/rho(I - LJ), 1/sigma_max(I - LJ))``; ``+inf`` where the
    denominator vanishes.
    """
    J = _stack(J_frf, name="J")
    L = _stack(L_resp, J.shape[0], name="L")
    M = np.eye(J.shape[-1]) - L @ J
    with np.errstate(divide="ignore"):
        return 1.0 / spectral_radius(M), 1.0 / max_singular_value(M)


# -- induced-norm (Gershgorin-type) bounds ----------------------------------


def gershgorin_bounds_thm4(factors: IterationFactors):
    """Right-hand sides (row sum, column sum, monotone) per frequency and loop."""
    P = factors.I_plus_E
    absP = np.abs(P)
    rhs20 = 1.0 / absP.sum(axis=2)
    rhs21 = 1.0 / absP.sum(axis=1)
    PPH = P @ np.conj(np.swapaxes(P, 1, 2))
    rhs22 = 1.0 / np.sqrt(np.abs(PPH).sum(axis=2))
    return rhs20, rhs21, rhs22


# -- structured singular value, diagonal structure --------------------------


@dataclass(frozen=True, eq=False)
class MuResult:
    mu: np.ndarray          # (K,) upper bounds
    scaling: np.ndarray     # (K, n) optimal diagonal D (positive)
    converged: np.ndarray   # (K,) bool

    @property
    def warning(self) -> bool:
        return not bool(np.all(self.converged))


def _sv_top(B):
    U, s, Vh = np.linalg.svd(B)
    return s[:, 0], U[:, :, 0], np.conj(Vh[:, 0, :])


def _scaled(A, x):
    d = np.exp(x)
    return A * d[:, :, None] / d[:, None, :]


def mu_upper_diag_batch(A: np.ndarray, max_iter: int = MU_MAX_ITER,
                        rel_tol: float = MU_REL_TOL) -> MuResult:
    """Upper bound ``min_D sigma_max(D A D^-1)`` over positive diagonal ``D``.

    Osborne balancing gives the starting scaling (it is already optimal for
    2x2 matrices, where minimizing the Frobenius norm minimizes the largest
    singular value). The bound is then refined by descent on ``log D``
    along ``|v|^2 - |u|^2`` (top singular vectors), accepting only steps
    that decrease the largest singular value.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim == 2:
        A = A[None]
    K, n, _ = A.shape
    if n == 1:
        return MuResult(np.abs(A[:, 0, 0]), np.ones((K, 1)), np.ones(K, bool))
    absA2 = np.abs(A) ** 2
    off = ~np.eye(n, dtype=bool)
    x = np.zeros((K, n))
    for _ in range(60):
        for i in range(n):
            d2 = np.exp(2 * x)
            row = np.sum(absA2[:, i, :] * off[i] / d2, axis=1) * d2[:, i]
            col = np.sum(absA2[:, :, i] * off[:, i] * d2, axis=1) / d2[:, i]
            ok = (row > 1e-300) & (col > 1e-300)
            step = np.where(ok, 0.25 * (np.log(np.where(ok, col, 1)) - np.log(np.where(ok, row, 1))), 0.0)
            x[:, i] += np.clip(step, -5, 5)
        x -= x[:, :1]
        np.clip(x, -40, 40, out=x)

    s0 = np.linalg.svd(A, compute_uv=False)[:, 0]
    s_bal, u, v = _sv_top(_scaled(A, x))
    use_bal = s_bal < s0
    x = np.where(use_bal[:, None], x, 0.0)
    best = np.where(use_bal, s_bal, s0)
    u0 = np.where(use_bal[:, None], u, 0)
    v0 = np.where(use_bal[:, None], v, 0)
    if np.any(~use_bal):
        _, u1, v1 = _sv_top(A[~use_bal])
        u0[~use_bal], v0[~use_bal] = u1, v1
    u, v = u0, v0

    active = best > 0
    converged = ~active
    alpha = np.ones(K)
    for _ in range(max_iter):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        au2 = np.abs(u[idx]) ** 2 + 1e-300
        av2 = np.abs(v[idx]) ** 2 + 1e-300
        direction = np.clip(0.5 * (np.log(av2) - np.log(au2)), -2, 2)
        direction -= direction.mean(axis=1, keepdims=True)
        a = np.minimum(1.0, 2 * alpha[idx])
        accepted = np.zeros(idx.size, bool)
        new_s = best[idx].copy()
        new_x = x[idx].copy()
        new_u, new_v = u[idx].copy(), v[idx].copy()
        for _h in range(30):
            todo = ~accepted
            if not np.any(todo):
                break
            xt = x[idx][todo] + a[todo, None] * direction[todo]
            st, ut, vt = _sv_top(_scaled(A[idx][todo], xt))
            ok = st < best[idx][todo]
            sel = np.flatnonzero(todo)[ok]
            new_s[sel], new_x[sel] = st[ok], xt[ok]
            new_u[sel], new_v[sel] = ut[ok], vt[ok]
            accepted[sel] = True
            a[np.flatnonzero(todo)[~ok]] *= 0.5
        improvement = (best[idx] - new_s) / best[idx]
        best[idx], x[idx], u[idx], v[idx] = new_s, new_x, new_u, new_v
        alpha[idx] = a
        done = (~accepted) | (improvement < rel_tol)
        converged[idx[done]] = True
        active[idx[done]] = False
    return MuResult(best, np.exp(x), converged)


def mu_upper_diag(A: np.ndarray, **kw) -> tuple[float, bool]:
    """Scalar convenience wrapper: ``(mu_hat, converged)``."""
    res = mu_upper_diag_batch(np.asarray(A, dtype=complex)[None], **kw)
    if res.warning:
        warnings.warn("D-scaling iteration hit the iteration cap; returning best bound so far",
                      RuntimeWarning, stacklevel=2)
    return float(res.mu[0]), bool(res.converged[0])


def ssv_bounds_thm5(factors: IterationFactors):
    """Loop-independent right-hand sides ``1/mu(I+E)`` and ``1/sqrt(mu((I+E)(I+E)^H))``.

    Returns ``(rhs24, rhs25, warning)``.
    """
    P = factors.I_plus_E
    mu1 = mu_upper_diag_batch(P)
    PPH = P @ np.conj(np.swapaxes(P, 1, 2))
    mu2 = mu_upper_diag_batch(PPH)
    with np.errstate(divide="ignore"):
        rhs24 = 1.0 / mu1.mu
        rhs25 = 1.0 / np.sqrt(mu2.mu)
    return rhs24, rhs25, mu1.warning or mu2.warning


# -- joint per-frequency evaluation -----------------------------------------


@dataclass(frozen=True, eq=False)
class DecentralizedBounds:
    """All Q-independent quantities needed to judge a diagonal ``Q``."""

    factors: IterationFactors
    rhs20: np.ndarray
    rhs21: np.ndarray
    rhs22: np.ndarray
    rhs24: np.ndarray
    rhs25: np.ndarray
    mu_warning: bool

    @classmethod
    def compute(cls, L_resp, J_frf) -> "DecentralizedBounds":
        f = factorize(L_resp, J_frf)
        r20, r21, r22 = gershgorin_bounds_thm4(f)
        r24, r25, warn = ssv_bounds_thm5(f)
        return cls(f, r20, r21, r22, r24, r25, warn)

    def criteria(self, q: np.ndarray):
        """Per-frequency flags of every criterion for diagonal ``q`` of shape (K, n)."""
        lhs = np.abs(q * self.factors.Md)
        r24 = self.rhs24[:, None]
        r25 = self.rhs25[:, None]
        return lhs, {
            "Eq20": np.all(_holds(lhs, self.rhs20), axis=1),
            "Eq21": np.all(_holds(lhs, self.rhs21), axis=1),
            "Eq24": np.all(_holds(lhs, r24), axis=1),
            "Eq22": np.all(_holds(lhs, self.rhs22), axis=1),
            "Eq25": np.all(_holds(lhs, r25), axis=1),
        }


@dataclass(frozen=True, eq=False)
class JointCheck:
    convergent: np.ndarray      # (K,) some convergence criterion holds for all loops
    monotone: np.ndarray
    conv_label: list
    mono_label: list

    @property
    def verdict_convergent(self) -> bool:
        return bool(np.all(self.convergent))

    @property
    def verdict_monotone(self) -> bool:
        return bool(np.all(self.monotone))

    def worst(self, target: str = "convergent") -> int | None:
        flags = self.convergent if target == "convergent" else self.monotone
        bad = np.flatnonzero(~flags)
        return int(bad[0]) if bad.size else None


def _label(flags: dict, names) -> list:
    out = []
    stacked = np.stack([flags[k] for k in names], axis=1)
    for row in stacked:
        hit = np.flatnonzero(row)
        out.append(names[hit[0]] if hit.size else "none")
    return out


def joint_condition_check(bounds: DecentralizedBounds, q: np.ndarray, labels: bool = True) -> JointCheck:
    """OR over criteria of (AND over loops), evaluated independently per frequency."""
    q = np.asarray(q)
    if q.ndim == 3:
        q = np.real(np.diagonal(q, axis1=1, axis2=2))
    _, flags = bounds.criteria(q)
    conv = flags["Eq20"] | flags["Eq21"] | flags["Eq24"]
    mono = flags["Eq22"] | flags["Eq25"]
    if labels:
        return JointCheck(conv, mono, _label(flags, CONV_CRITERIA), _label(flags, MONO_CRITERIA))
    return JointCheck(conv, mono, [], [])


# -- full report -------------------------------------------------------------


@dataclass(eq=False)
class ConvergenceReport:
    omega: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    qM: np.ndarray            # (K, n) |q_i M_ii|
    rhs20: np.ndarray
    rhs21: np.ndarray
    rhs22: np.ndarray
    rhs24: np.ndarray
    rhs25: np.ndarray
    flags: dict
    joint: JointCheck
    mu_warning: bool
    ts: float = 1.0
    notes: list = field(default_factory=list)

    @property
    def gamma(self) -> float:
        return float(np.max(self.sigma))

    @property
    def convergent(self) -> bool:
        return bool(np.all(_holds(self.rho, 1.0)))

    @property
    def monotone(self) -> bool:
        return bool(_holds(self.gamma, 1.0))

    @property
    def worst_index(self) -> int:
        return int(np.argmax(self.rho))

    @property
    def worst_omega(self) -> float:
        return float(self.omega[self.worst_index])

    def verdict(self, target: str) -> bool:
        return self.convergent if target == "convergent" else self.monotone

    def margins(self) -> dict:
        lhs = self.qM
        out = {
            "spectral_radius": float(np.min(1 - self.rho)),
            "max_singular_value": float(np.min(1 - self.sigma)),
            "Eq20": float(np.min(self.rhs20 - lhs)),
            "Eq21": float(np.min(self.rhs21 - lhs)),
            "Eq22": float(np.min(self.rhs22 - lhs)),
            "Eq24": float(np.min(self.rhs24[:, None] - lhs)),
            "Eq25": float(np.min(self.rhs25[:, None] - lhs)),
        }
        conv = np.max(np.stack([np.min(self.rhs20 - lhs, axis=1), np.min(self.rhs21 - lhs, axis=1),
                                np.min(self.rhs24[:, None] - lhs, axis=1)]), axis=0)
        mono = np.max(np.stack([np.min(self.rhs22 - lhs, axis=1),
                                np.min(self.rhs25[:, None] - lhs, axis=1)]), axis=0)
        out["joint_convergent"] = float(np.min(conv))
        out["joint_monotone"] = float(np.min(mono))
        return out

    def summary(self) -> dict:
        return {
            "gamma": self.gamma,
            "convergent": self.convergent,
            "monotone": self.monotone,
            "joint_convergent": self.joint.verdict_convergent,
            "joint_monotone": self.joint.verdict_monotone,
            "worst_omega": self.worst_omega,
            "worst_hz": self.worst_omega / (2 * np.pi * self.ts),
            "max_rho": float(np.max(self.rho)),
            "margins": self.margins(),
            "mu_warning": self.mu_warning,
            "notes": list(self.notes),
        }

    def verdict_line(self) -> str:
        return (f"convergent={str(self.convergent).lower()} monotone={str(self.monotone).lower()} "
                f"gamma={self.gamma:.6f} worst_omega={self.worst_omega:.6f}")

    def columns(self) -> list[str]:
        n = self.qM.shape[1]
        cols = ["omega", "rho", "sigma_max"]
        cols += [f"q{i + 1}M{i + 1}{i + 1}_abs" for i in range(n)]
        for name in ("eq20", "eq21", "eq22"):
            cols += [f"rhs_{name}_{i + 1}" for i in range(n)]
        cols += ["rhs_eq24", "rhs_eq25", "criterion_label", "monotone_label", "convergent", "monotone"]
        return cols

    def rows(self):
        for k in range(self.omega.size):
            row = [self.omega[k], self.rho[k], self.sigma[k], *self.qM[k],
                   *self.rhs20[k], *self.rhs21[k], *self.rhs22[k], self.rhs24[k], self.rhs25[k]]
            yield [repr(float(v)) for v in row] + [
                self.joint.conv_label[k], self.joint.mono_label[k],
                str(bool(_holds(self.rho[k], 1.0))).lower(),
                str(bool(_holds(self.sigma[k], 1.0))).lower()]


def convergence_report(Q_resp, L_resp, J_frf: FrfMatrix, bounds: DecentralizedBounds | None = None) -> ConvergenceReport:
    """Evaluate every criterion for given responses of ``Q`` (diagonal), ``L`` and ``J``."""
    J = _stack(J_frf, name="J")
    K, n = J.shape[0], J.shape[-1]
    Q = _stack(Q_resp, K, name="Q")
    q = np.real(np.diagonal(Q, axis1=1, axis2=2))
    notes = []
    if bounds is None:
        try:
            bounds = DecentralizedBounds.compute(L_resp, J_frf)
        except ZeroDiagonalM as exc:
            # diagonal learning is exact somewhere; only the full-matrix tests apply
            return _report_without_bounds(Q, L_resp, J, J_frf, q, str(exc))
    G = Q @ bounds.factors.M
    rho = spectral_radius(G)
    sigma = max_singular_value(G)
    lhs, flags = bounds.criteria(q)
    joint = joint_condition_check(bounds, q)
    if n > 3:
        notes.append("n > 3: D-scaling upper bound on mu is not guaranteed tight")
    ts = J_frf.grid.ts if isinstance(J_frf, FrfMatrix) else 1.0
    omega = J_frf.omega if isinstance(J_frf, FrfMatrix) else np.arange(K, dtype=float)
    return ConvergenceReport(np.asarray(omega), rho, sigma, lhs, bounds.rhs20, bounds.rhs21,
                             bounds.rhs22, bounds.rhs24, bounds.rhs25, flags, joint,
                             bounds.mu_warning, ts, notes)


def grid_of(J_frf) -> FrequencyGrid | None:
    return J_frf.grid if isinstance(J_frf, FrfMatrix) else None


def _report_without_bounds(Q, L_resp, J, J_frf, q, reason) -> ConvergenceReport:
    K, n = J.shape[0], J.shape[-1]
    L = _stack(L_resp, K, name="L")
    G = Q @ (np.eye(n) - L @ J)
    rho = spectral_radius(G)
    sigma = max_singular_value(G)
    nan_loop = np.full((K, n), np.nan)
    nan_k = np.full(K, np.nan)
    conv = _holds(rho, 1.0)
    mono = _holds(sigma, 1.0)
    flags = {k: np.zeros(K, dtype=bool) for k in ("Eq20", "Eq21", "Eq24", "Eq22", "Eq25")}
    joint = JointCheck(conv, mono, ["spectral_radius" if c else "none" for c in conv],
                       ["max_singular_value" if m else "none" for m in mono])
    ts = J_frf.grid.ts if isinstance(J_frf, FrfMatrix) else 1.0
    omega = J_frf.omega if isinstance(J_frf, FrfMatrix) else np.arange(K, dtype=float)
    return ConvergenceReport(np.asarray(omega), rho, sigma, np.abs(q * np.diagonal(G, axis1=1, axis2=2)),
                             nan_loop, nan_loop, nan_loop, nan_k, nan_k, flags, joint, False, ts,
                             [f"decentralized bounds skipped: {reason}"])
