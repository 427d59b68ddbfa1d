"""Frequency grids, FRF containers, interaction analysis and static decoupling."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InputError, SingularAtAnchor, ZeroDiagonal

_PI_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing frequencies in rad/sample on [0, pi]."""

    omega: np.ndarray
    ts: float = 1.0

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float).ravel()
        if omega.size == 0:
            raise InputError("frequency grid is empty")
        if not np.all(np.isfinite(omega)):
            raise InputError("frequency grid contains non-finite values")
        if omega[0] < -_PI_TOL:
            raise InputError(f"grid frequency {float(omega[0]):.6g} below lower bound 0")
        if omega[-1] > np.pi + _PI_TOL:
            raise InputError(f"grid frequency {float(omega[-1]):.6g} above upper bound pi")
        if np.any(np.diff(omega) <= 0):
            raise InputError("grid frequencies must be strictly increasing")
        if not self.ts > 0:
            raise InputError(f"sample time must be positive, got {self.ts!r}")
        omega = np.clip(omega, 0.0, np.pi)
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "ts", float(self.ts))

    def __len__(self):
        return self.omega.size

    @property
    def hz(self) -> np.ndarray:
        return self.omega / (2 * np.pi * self.ts)

    @property
    def nyquist_hz(self) -> float:
        return 0.5 / self.ts

    @property
    def is_uniform_full(self) -> bool:
        """True for the grid ``pi*k/P, k = 0..P`` used for inverse DFT synthesis."""
        P = self.omega.size - 1
        if P < 1:
            return False
        return bool(np.allclose(self.omega, np.pi * np.arange(P + 1) / P, rtol=0, atol=1e-12))

    def nearest(self, omega: float) -> int:
        return int(np.argmin(np.abs(self.omega - omega)))

    @classmethod
    def from_hz(cls, freqs_hz, ts: float) -> "FrequencyGrid":
        return cls(2 * np.pi * np.asarray(freqs_hz, dtype=float) * ts, ts)

    @classmethod
    def default(cls, ts: float, count: int = 2000, f_min_hz: float = 0.1,
                include_dc: bool = True) -> "FrequencyGrid":
        """Log-spaced grid from ``f_min_hz`` to Nyquist, plus the endpoints 0 and pi."""
        if count < 2:
            raise InputError(f"grid count must be >= 2, got {count}")
        nyq = 0.5 / ts
        if not 0 < f_min_hz < nyq:
            raise InputError(f"lowest grid frequency {f_min_hz} Hz outside (0, {nyq}) Hz")
        omega = 2 * np.pi * ts * np.geomspace(f_min_hz, nyq, count)
        omega[-1] = np.pi
        if include_dc:
            omega = np.concatenate([[0.0], omega])
        return cls(omega, ts)

    @classmethod
    def uniform(cls, P: int, ts: float = 1.0) -> "FrequencyGrid":
        """``P + 1`` points ``pi*k/P``; one half of a length-``2P`` DFT grid."""
        if P < 1:
            raise InputError("uniform grid needs P >= 1")
        return cls(np.pi * np.arange(P + 1) / P, ts)

    def to_dict(self) -> dict:
        return {"ts": self.ts, "omega": self.omega.tolist()}


@dataclass(frozen=True, eq=False)
class FrfMatrix:
    """Complex ``ny x nu`` response matrix per grid point, stored as ``(K, ny, nu)``."""

    grid: FrequencyGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim == 1:
            data = data[:, None, None]
        if data.ndim != 3:
            raise DimensionMismatch(f"FRF data must be (K, ny, nu), got shape {data.shape}")
        if data.shape[0] != len(self.grid):
            raise DimensionMismatch(
                f"FRF has {data.shape[0]} samples but grid has {len(self.grid)} points")
        if min(data.shape[1:]) < 1:
            raise DimensionMismatch("FRF needs at least one input and one output")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    @property
    def omega(self) -> np.ndarray:
        return self.grid.omega

    def is_square(self) -> bool:
        return self.shape[0] == self.shape[1]

    def diagonal(self) -> "FrfMatrix":
        """Diagonal part as a (square) FRF with zero off-diagonal entries."""
        self._require_square()
        n = self.shape[0]
        d = np.zeros_like(self.data)
        idx = np.arange(n)
        d[:, idx, idx] = self.data[:, idx, idx]
        return FrfMatrix(self.grid, d)

    def _require_square(self):
        if not self.is_square():
            raise DimensionMismatch(f"square FRF required, got {self.shape}")

    def __matmul__(self, other):
        if isinstance(other, FrfMatrix):
            _check_same_grid(self, other)
            return FrfMatrix(self.grid, self.data @ other.data)
        return FrfMatrix(self.grid, self.data @ np.asarray(other))

    def __rmatmul__(self, other):
        return FrfMatrix(self.grid, np.asarray(other) @ self.data)

    # -- serialization -------------------------------------------------

    def _columns(self) -> list[str]:
        ny, nu = self.shape
        cols = ["omega"]
        for i in range(ny):
            for k in range(nu):
                cols += [f"re_{i + 1}{k + 1}", f"im_{i + 1}{k + 1}"]
        return cols

    def to_csv(self, path=None, comments: tuple[str, ...] = ()) -> str:
        """Row-major CSV; returns the text and writes it when ``path`` is given."""
        ny, nu = self.shape
        buf = io.StringIO()
        for line in comments:
            buf.write(f"# {line}\n")
        buf.write(f"# ts={self.grid.ts!r} ny={ny} nu={nu}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self._columns())
        flat = self.data.reshape(len(self.grid), ny * nu)
        for om, row in zip(self.grid.omega, flat):
            vals = [repr(float(om))]
            for v in row:
                vals += [repr(float(v.real)), repr(float(v.imag))]
            w.writerow(vals)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, ts: float | None = None) -> "FrfMatrix":
        text = _read_text(path_or_text)
        meta = {}
        rows = []
        for line in text.splitlines():
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                for tok in s[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        meta[key] = val
                continue
            rows.append([c.strip() for c in s.split(",")])
        if not rows:
            raise InputError("FRF CSV has no header row")
        header, body = rows[0], rows[1:]
        if not header or header[0] != "omega" or (len(header) - 1) % 2:
            raise InputError(f"FRF CSV header malformed: {header[:3]}...")
        n_entries = (len(header) - 1) // 2
        ny = int(meta.get("ny", 0)) or int(round(np.sqrt(n_entries)))
        nu = int(meta.get("nu", 0)) or n_entries // ny
        if ny * nu != n_entries:
            raise InputError(f"FRF CSV has {n_entries} entries, inconsistent with {ny}x{nu}")
        try:
            arr = np.array([[float(v) for v in r] for r in body], dtype=float)
        except ValueError as exc:
            raise InputError(f"FRF CSV contains a non-numeric value: {exc}") from None
        if arr.ndim != 2 or arr.shape[1] != len(header):
            raise InputError("FRF CSV rows have inconsistent column counts")
        if ts is None:
            ts = float(meta.get("ts", 1.0))
        grid = FrequencyGrid(arr[:, 0], ts)
        vals = arr[:, 1::2] + 1j * arr[:, 2::2]
        return cls(grid, vals.reshape(-1, ny, nu))

    def to_dict(self) -> dict:
        ny, nu = self.shape
        return {
            "ts": self.grid.ts,
            "ny": ny,
            "nu": nu,
            "omega": self.grid.omega.tolist(),
            "re": self.data.real.tolist(),
            "im": self.data.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrfMatrix":
        try:
            grid = FrequencyGrid(d["omega"], d.get("ts", 1.0))
            data = np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)
        except KeyError as exc:
            raise InputError(f"FRF JSON missing key {exc}") from None
        return cls(grid, data)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path_or_text) -> "FrfMatrix":
        return cls.from_dict(json.loads(_read_text(path_or_text)))


def _read_text(path_or_text) -> str:
    if isinstance(path_or_text, Path):
        return path_or_text.read_text()
    s = str(path_or_text)
    if "\n" in s or s.lstrip()[:1] in ("{", "["):
        return s
    try:
        is_file = Path(s).is_file()
    except OSError:
        is_file = False
    return Path(s).read_text() if is_file else s


def _check_same_grid(a: FrfMatrix, b: FrfMatrix):
    if len(a.grid) != len(b.grid) or not np.allclose(a.grid.omega, b.grid.omega, atol=1e-14):
        raise DimensionMismatch("FRFs are defined on different grids")


# -- interaction ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Interaction:
    """Normalized off-diagonal coupling ``diag(F)^-1 (F - diag(F))`` per frequency."""

    E: np.ndarray          # (K, n, n)
    sigma: np.ndarray      # (K,) largest singular value of E
    threshold: float

    @property
    def summary(self) -> float:
        return float(np.max(self.sigma))

    @property
    def decoupled(self) -> bool:
        return self.summary < self.threshold


def normalized_interaction(data: np.ndarray) -> np.ndarray:
    """``diag(A)^-1 (A - diag(A))`` for a stack of square matrices."""
    n = data.shape[-1]
    idx = np.arange(n)
    d = data[..., idx, idx]
    bad = np.abs(d) == 0
    if np.any(bad):
        k, i = np.argwhere(bad)[0]
        raise ZeroDiagonal(f"diagonal entry ({i + 1},{i + 1}) is zero at grid index {k}")
    off = data.copy()
    off[..., idx, idx] = 0
    return off / d[..., :, None]


def interaction_measure(frf: FrfMatrix, threshold: float = 0.1) -> Interaction:
    frf._require_square()
    E = normalized_interaction(frf.data)
    sigma = np.linalg.svd(E, compute_uv=False)[:, 0]
    return Interaction(E, sigma, threshold)


# -- static decoupling ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecouplingTransform:
    T: np.ndarray
    omega0: float
    condition: float
    interaction_before: float
    interaction_after: float

    def to_dict(self) -> dict:
        return {
            "T": self.T.tolist(),
            "omega0": self.omega0,
            "condition": self.condition,
            "interaction_before": self.interaction_before,
            "interaction_after": self.interaction_after,
        }


def default_anchor(grid: FrequencyGrid, f_hz: float = 1.0) -> float:
    """Grid frequency nearest ``f_hz`` (rad/sample)."""
    return float(grid.omega[grid.nearest(2 * np.pi * f_hz * grid.ts)])


def static_decoupling(frf_of_G: FrfMatrix, omega0: float | None = None) -> DecouplingTransform:
    """Real input transformation ``T`` making ``G @ T`` diagonal at ``omega0``.

    ``T = Re(G(omega0))^-1`` with each column scaled to unit max-abs entry
    and a positive diagonal entry, so the loop gains keep the sign of the
    physical plant (a mass-dominated ``G`` stays mass-like after decoupling).
    """
    frf_of_G._require_square()
    grid = frf_of_G.grid
    if omega0 is None:
        omega0 = default_anchor(grid)
    k = grid.nearest(omega0)
    if not np.isclose(grid.omega[k], omega0, rtol=1e-9, atol=1e-12):
        raise InputError(f"anchor frequency {omega0!r} is not a grid point")
    G0 = frf_of_G.data[k]
    R = G0.real
    s = np.linalg.svd(R, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise SingularAtAnchor(f"Re G is singular at omega0={omega0:.6g} (cond={s[0] / max(s[-1], 1e-300):.3g})")
    T = np.linalg.inv(R)
    sign = np.where(np.diag(T) < 0, -1.0, 1.0)
    T = T / (np.max(np.abs(T), axis=0) * sign)
    before = _sigma_at(G0)
    after = _sigma_at(G0 @ T)
    if after >= before and before > 0:
        # Re G^-1 amplifies Im G when Re G is ill-conditioned
        warnings.warn(f"static decoupling did not reduce interaction at the anchor "
                      f"({before:.3g} -> {after:.3g}); Im G is large relative to Re G",
                      RuntimeWarning, stacklevel=2)
    return DecouplingTransform(T, float(grid.omega[k]), float(np.linalg.cond(T)), before, after)


def _sigma_at(A: np.ndarray) -> float:
    E = normalized_interaction(A[None])[0]
    return float(np.linalg.svd(E, compute_uv=False)[0])
