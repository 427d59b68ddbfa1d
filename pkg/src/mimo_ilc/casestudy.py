"""Surrogate 2x2 flatbed-printer scenario and the end-to-end design procedure.

The plant maps the two carriage forces (F_L, F_R) to the carriage position
x_L and the gantry rotation phi_2. It is a modal model: two rigid-body modes,
two lightly damped flexible modes and a first-order actuator lag per input,
followed by a real input mixing that couples the channels. All parameters
live in ``data/scenario.json`` and are loaded verbatim, so every run of the
scenario is reproducible.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import synthesis as syn
from .errors import InputError, NonContractive, NumericalError
from .frf import FrequencyGrid, FrfMatrix, default_anchor, interaction_measure, static_decoupling
from .lti import (RationalTransfer, StateSpace, TransferMatrix, closed_loop_maps, evaluate_frf,
                  transmission_zeros, zoh_discretize)
from .sim import (fixed_points, iteration_operator, lift, lift_design, lifted_gamma,
                  monotonicity_audit, run_trials, signals_csv, trials_csv, _csv_text)


def default_parameters() -> dict:
    """The frozen scenario parameters shipped with the package."""
    text = resources.files("mimo_ilc").joinpath("data/scenario.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise InputError(f"unknown scenario key {where + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, where + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def scenario_parameters(overrides: dict | None = None) -> dict:
    """Default parameters with ``overrides`` merged in; unknown keys are rejected."""
    return _merge(default_parameters(), overrides or {})


# -- plant -------------------------------------------------------------------


def modal_plant(plant: dict, perturbed: bool = False) -> StateSpace:
    """Continuous-time plant from forces to (x_L, phi_2).

    With ``perturbed`` the flexible mode named by ``model_error`` has its
    natural frequency scaled by ``frequency_factor``.
    """
    r = np.sqrt(np.asarray(plant["rigid_residues"], dtype=float))
    modes = [(0.0, 0.0, [r[0], 0.0], [r[0], 0.0]), (0.0, 0.0, [0.0, r[1]], [0.0, r[1]])]
    err = plant["model_error"]
    for k, m in enumerate(plant["flexible_modes"]):
        f = m["f_hz"] * (err["frequency_factor"] if perturbed and k == err["mode"] else 1.0)
        modes.append((f, m["damping"], m["phi"], m["psi"]))
    nm = 2 * len(modes)
    A = np.zeros((nm, nm))
    B = np.zeros((nm, 2))
    C = np.zeros((2, nm))
    for k, (f, z, phi, psi) in enumerate(modes):
        w = 2 * np.pi * f
        A[2 * k, 2 * k + 1] = 1.0
        A[2 * k + 1, 2 * k] = -w * w
        A[2 * k + 1, 2 * k + 1] = -2 * z * w
        B[2 * k + 1] = psi
        C[:, 2 * k] = phi
    # first-order actuator lag on each input, then the force mixing
    pa = 2 * np.pi * plant["actuator_lag_hz"]
    Aa = np.block([[A, B], [np.zeros((2, nm)), -pa * np.eye(2)]])
    Ba = np.vstack([np.zeros((nm, 2)), pa * np.eye(2)])
    Ba = Ba @ np.linalg.inv(np.asarray(plant["input_mixing"], dtype=float))
    return StateSpace(Aa, Ba, np.hstack([C, np.zeros((2, 2))]), np.zeros((2, 2)))


def controllers(params: dict) -> TransferMatrix:
    """Diagonal lead controllers ``c_i(z) = k_i (z - z_i) / (z - p_i)``."""
    ts = params["ts"]
    parts = [RationalTransfer([c["gain"], -c["gain"] * c["zero"]], [1.0, -c["pole"]], ts)
             for c in params["controllers"]]
    return TransferMatrix.diagonal(parts)


@dataclass(eq=False)
class Surrogate:
    """Plant, model and closed-loop maps of the scenario.

    ``Go``/``Go_hat`` act on the physical forces; ``G``/``G_hat`` include the
    static decoupling ``Tu`` and are what the controllers see.
    """
    Go: TransferMatrix
    Go_hat: TransferMatrix
    C: TransferMatrix
    Tu: np.ndarray
    G: TransferMatrix
    G_hat: TransferMatrix
    S: TransferMatrix
    J: TransferMatrix
    J_hat: TransferMatrix
    grid: FrequencyGrid
    checks: dict = field(default_factory=dict)


def analysis_grid(params: dict) -> FrequencyGrid:
    a = params["analysis"]
    return FrequencyGrid.default(params["ts"], count=a["grid_points"], f_min_hz=a["f_min_hz"])


def _crossover_hz(loop: np.ndarray, hz: np.ndarray) -> float:
    below = np.nonzero(np.abs(loop) < 1.0)[0]
    return float(hz[below[0]]) if below.size else float("nan")


def _check(ok: bool, what: str, detail: str):
    if not ok:
        raise NumericalError(f"surrogate invariant violated: {what} ({detail})")


def build_surrogate(params: dict | None = None, check: bool = True) -> Surrogate:
    """Discretize the plant and its model, decouple, close the loops.

    With ``check`` the scenario invariants are asserted and the measured
    values are stored in ``Surrogate.checks``; any failure raises
    ``NumericalError`` naming the invariant.
    """
    params = params or default_parameters()
    ts = params["ts"]
    Go = TransferMatrix.from_state_space(zoh_discretize(modal_plant(params["plant"]), ts))
    Go_hat = TransferMatrix.from_state_space(
        zoh_discretize(modal_plant(params["plant"], perturbed=True), ts))
    grid = analysis_grid(params)
    # the rigid-body poles sit at z = 1, so omega = 0 is left out here
    gz = FrequencyGrid(grid.omega[grid.omega > 0], ts)
    Go_frf = FrfMatrix(gz, Go.response(gz.omega))
    anchor = default_anchor(gz, params["analysis"]["anchor_hz"])
    Tu = static_decoupling(Go_frf, anchor).T
    G, G_hat = Go @ Tu, Go_hat @ Tu
    C = controllers(params)
    S, J = closed_loop_maps(G, C)
    _, J_hat = closed_loop_maps(G_hat, C)
    sur = Surrogate(Go, Go_hat, C, Tu, G, G_hat, S, J, J_hat, grid)
    if check:
        sur.checks = _surrogate_checks(sur, params, Go_frf)
    return sur


def _surrogate_checks(sur: Surrogate, params: dict, Go_frf: FrfMatrix) -> dict:
    c = params["checks"]
    gz = Go_frf.grid
    hz = gz.hz
    before = interaction_measure(Go_frf, c["interaction_threshold"]).sigma
    G_frf = FrfMatrix(gz, sur.G.response(gz.omega))
    after = interaction_measure(G_frf, c["interaction_threshold"]).sigma
    low = hz < c["dominance_below_hz"]
    ratio = float(np.max(after[low] / before[low]))
    _check(ratio <= 1 - c["dominance_reduction"], "dominance after decoupling",
           f"worst after/before ratio below {c['dominance_below_hz']} Hz is {ratio:.3g}")
    high = hz > c["interaction_above_hz"]
    inter = float(np.min(before[high]))
    _check(inter > c["interaction_threshold"], "interaction at high frequency",
           f"min sigma(E) above {c['interaction_above_hz']} Hz is {inter:.3g}")

    Cr = sur.C.response(gz.omega)
    bw = [_crossover_hz(G_frf.data[:, i, i] * Cr[:, i, i], hz) for i in range(2)]
    for b, target in zip(bw, c["bandwidth_hz"]):
        _check(abs(b - target) <= c["bandwidth_tol"] * target, "bandwidth",
               f"{b:.3g} Hz vs {target} Hz")

    zeros = transmission_zeros(sur.J)
    nmp = [z.value for z in zeros if z.nonminimum_phase]
    _check(bool(nmp), "non-minimum-phase zero of J", "none with |z| >= 1")

    Jf = evaluate_frf(sur.J, sur.grid)
    Jh = evaluate_frf(sur.J_hat, sur.grid)
    rel = np.abs(Jh.data[:, 1, 1] - Jf.data[:, 1, 1]) / np.abs(Jf.data[:, 1, 1])
    f_err = float(sur.grid.hz[np.argmax(rel)])
    p = params["plant"]
    f_res = p["flexible_modes"][p["model_error"]["mode"]]["f_hz"]
    _check(abs(f_err - f_res) <= c["model_error_window"] * f_res, "model error location",
           f"largest relative error at {f_err:.3g} Hz, resonance at {f_res} Hz")
    return {
        "dominance_ratio": ratio,
        "interaction_min_above": inter,
        "bandwidth_hz": bw,
        "nmp_zeros": [[z.real, z.imag] for z in nmp],
        "model_error_peak_hz": f_err,
    }


# -- references ----------------------------------------------------------------


def _smoothstep(tau: np.ndarray) -> np.ndarray:
    # zero velocity, acceleration and jerk at both ends
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 4 * (35 - 84 * tau + 70 * tau ** 2 - 20 * tau ** 3)


def build_references(params: dict | None = None) -> np.ndarray:
    """Staggered point-to-point moves, one column per output, shape (N, 2)."""
    params = params or default_parameters()
    ref = params["references"]
    t = np.arange(params["N"]) * params["ts"]
    r = np.zeros((params["N"], len(ref["moves"])))
    for i, (amp, moves) in enumerate(zip(ref["amplitudes"], ref["moves"])):
        for mv in moves:
            r[:, i] += mv["direction"] * amp * _smoothstep((t - mv["start"]) / mv["duration"])
    return r


def task_starts(params: dict) -> list[int]:
    """Sample indices at which a motion task begins, over all channels."""
    ts = params["ts"]
    return sorted({int(round(mv["start"] / ts)) for ch in params["references"]["moves"] for mv in ch})


# -- procedure -----------------------------------------------------------------


@dataclass(eq=False)
class Scenario:
    params: dict
    surrogate: Surrogate
    r: np.ndarray

    @property
    def modes(self) -> list[str]:
        return list(self.params["design"]["modes"])


def load_scenario(overrides: dict | None = None) -> Scenario:
    params = scenario_parameters(overrides)
    for m in params["design"]["modes"]:
        if m not in syn.MODES:
            raise InputError(f"unknown design mode {m!r}")
    return Scenario(params, build_surrogate(params), build_references(params))


@dataclass(eq=False)
class ModeResult:
    mode: str
    design: syn.IlcDesign
    records: list
    gamma_lift: float
    f_inf: np.ndarray | None
    e_inf: np.ndarray | None
    audit: object | None
    preaction: list[float]

    @property
    def cutoffs(self) -> list[float]:
        return self.design.cutoffs

    @property
    def e_inf_norm(self) -> float:
        return float(np.linalg.norm(self.e_inf)) if self.e_inf is not None else float("nan")

    @property
    def diverged(self) -> bool:
        return any(rec.diverged for rec in self.records)

    @property
    def convergent(self) -> bool:
        return bool(self.design.report.convergent and self.f_inf is not None and not self.diverged)

    @property
    def monotone(self) -> bool:
        return bool(self.audit is not None and self.audit.monotone)


@dataclass(eq=False)
class ScenarioReport:
    scenario: Scenario
    interaction_before: float
    interaction_after: float
    results: dict

    def table1_rows(self):
        for m, res in self.results.items():
            fc = res.cutoffs
            yield [m, fc[0], fc[1], res.e_inf_norm, str(res.convergent).lower(), str(res.monotone).lower()]

    def fig3_rows(self):
        for m, res in self.results.items():
            for rec in res.records:
                yield [m, rec.trial, rec.e_norm]

    def summary(self) -> dict:
        return {
            "interaction_before": self.interaction_before,
            "interaction_after": self.interaction_after,
            "Tu": self.scenario.surrogate.Tu.tolist(),
            "checks": self.scenario.surrogate.checks,
            "modes": {m: {"cutoffs": res.cutoffs, "e_inf_F": res.e_inf_norm,
                          "gamma_lift": res.gamma_lift, "convergent": res.convergent,
                          "monotone": res.monotone, "diverged": res.diverged,
                          "preaction": res.preaction,
                          "design": res.design.to_dict()["report"]}
                      for m, res in self.results.items()},
        }

    def write(self, out_dir, comments=(), header: dict | None = None) -> list[Path]:
        """Write table1.csv, fig3.csv, per-mode dumps and scenario.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []

        def put(name, text):
            p = out / name
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
            written.append(p)

        put("table1.csv", _csv_text(["mode", "fc_1", "fc_2", "e_inf_F", "convergent", "monotone"],
                                    self.table1_rows(), comments))
        put("fig3.csv", _csv_text(["mode", "trial", "e_norm_F"], self.fig3_rows(), comments))
        for m, res in self.results.items():
            put(f"{m}/trials.csv", trials_csv(res.records, comments=comments))
            last = res.records[-1]
            put(f"{m}/trial_{last.trial}_signals.csv", signals_csv(last, comments=comments))
            put(f"{m}/design.json", res.design.to_json())
        doc = {"header": header or {}, "parameters": self.scenario.params, "results": self.summary()}
        put("scenario.json", json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return written


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def preactuation(f: np.ndarray, starts: list[int], window: int) -> list[float]:
    """Peak of ``|f|`` in the ``window`` samples before each start, relative to the overall peak."""
    peak = float(np.max(np.abs(f)))
    if peak == 0:
        return [0.0 for _ in starts]
    return [float(np.max(np.abs(f[max(k - window, 0):k]))) / peak if k > 0 else 0.0 for k in starts]


def run_mode(scenario: Scenario, design: syn.IlcDesign, S_op, J_op) -> ModeResult:
    p = scenario.params
    N = p["N"]
    L_op, Q_op = lift_design(design, N)
    gamma = lifted_gamma(iteration_operator(L_op, Q_op, J_op))
    try:
        fp = fixed_points((L_op, Q_op), S_op, J_op, scenario.r, gamma=gamma)
        f_inf, e_inf = fp.f, fp.e
    except NonContractive:
        f_inf = e_inf = None
    records = run_trials((L_op, Q_op), S_op, J_op, scenario.r, p["trials"], f_inf=f_inf)
    audit = monotonicity_audit(records, f_inf, gamma) if f_inf is not None else None
    pre = []
    if f_inf is not None:
        pre = preactuation(f_inf, task_starts(p), p["checks"]["preaction_window"])
    return ModeResult(design.mode, design, records, gamma, f_inf, e_inf, audit, pre)


def run_procedure2(scenario: Scenario) -> ScenarioReport:
    """Sample J, analyse interaction, decouple, design every mode, simulate.

    The FRF of the true ``J`` is taken as exact; the learning filters are
    built from the model ``J_hat``, which carries the resonance error.
    """
    p = scenario.params
    sur = scenario.surrogate
    J_frf = evaluate_frf(sur.J, sur.grid)
    gz = FrequencyGrid(sur.grid.omega[sur.grid.omega > 0], p["ts"])
    before = interaction_measure(FrfMatrix(gz, sur.Go.response(gz.omega))).summary
    after = interaction_measure(FrfMatrix(gz, sur.G.response(gz.omega))).summary
    d = p["design"]
    S_op = lift(sur.S, p["N"])
    J_op = lift(sur.J, p["N"])
    results = {}
    for mode in scenario.modes:
        design = syn.build_design(mode, sur.J_hat, J_frf, K=d["K"], reg=d["reg"], target=d["target"],
                                  order=d["order"], fir_points=d["fir_points"])
        results[mode] = run_mode(scenario, design, S_op, J_op)
    return ScenarioReport(scenario, float(before), float(after), results)
