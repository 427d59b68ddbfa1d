"""Command-line front end: ``mimo-ilc {frf,analyze,design,simulate,casestudy}``.

Settings come from a JSON config file (``--config``) and are overridden by
flags. Exit codes: 0 ok, 2 bad input, 3 numerical failure, 4 verdict false
under ``--strict``, 5 no feasible cut-off.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import casestudy as cs
from . import synthesis as syn
from .errors import IlcError, InputError, NoFeasibleCutoff, NumericalError
from .frf import FrequencyGrid, FrfMatrix
from .lti import TransferMatrix, evaluate_frf
from .sim import (_csv_text, fixed_points, iteration_operator, lift, lift_design, lifted_gamma,
                  monotonicity_audit, run_trials, signals_csv, trials_csv)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_STRICT, EXIT_INFEASIBLE = 0, 2, 3, 4, 5

# key -> (type, check, description)
_PATH = (str, None, "file path")
SCHEMA = {
    "model": _PATH,
    "frf": _PATH,
    "design": _PATH,
    "s_model": _PATH,
    "j_model": _PATH,
    "reference": _PATH,
    "out": (str, None, "output directory"),
    "ts": (float, lambda v: v > 0, "sample time > 0"),
    "grid": (dict, None, "grid specification"),
    "mode": (str, lambda v: v in syn.MODES, f"one of {', '.join(syn.MODES)}"),
    "target": (str, lambda v: v in syn.TARGETS, f"one of {', '.join(syn.TARGETS)}"),
    "preview": (int, lambda v: 1 <= v <= 100000, "integer in [1, 100000]"),
    "reg": (float, lambda v: 0 <= v < 1, "number in [0, 1)"),
    "order": (int, lambda v: 1 <= v <= 8, "integer in [1, 8]"),
    "fir_points": (int, lambda v: 16 <= v <= 2 ** 20, "integer in [16, 2^20]"),
    "trials": (int, lambda v: 1 <= v <= 10000, "integer in [1, 10000]"),
    "strict": (bool, None, "boolean"),
    "seed": (int, lambda v: v >= 0, "non-negative integer"),
    "scenario": (dict, None, "scenario overrides"),
}
GRID_SCHEMA = {
    "count": (int, lambda v: v >= 2, "integer >= 2"),
    "f_min_hz": (float, lambda v: v > 0, "number > 0"),
    "spacing": (str, lambda v: v in ("log", "linear"), "'log' or 'linear'"),
    "omega": (list, None, "list of frequencies in rad/sample"),
}
DEFAULTS = {
    "out": "out",
    "grid": {"count": 2000, "f_min_hz": 0.1, "spacing": "log"},
    "mode": "alg1",
    "target": "convergent",
    "preview": 200,
    "reg": 1e-8,
    "order": 1,
    "fir_points": 8192,
    "trials": 10,
    "strict": False,
    "seed": 0,
    "scenario": {},
}


def _validate(cfg: dict, schema: dict, where: str = ""):
    for key, val in cfg.items():
        if key not in schema:
            raise InputError(f"unknown config key {where + key!r}")
        typ, ok, desc = schema[key]
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            val = cfg[key] = float(val)
        if typ is int and isinstance(val, bool) or not isinstance(val, typ):
            raise InputError(f"config key {where + key!r} must be {desc}, got {val!r}")
        if ok is not None and not ok(val):
            raise InputError(f"config key {where + key!r} must be {desc}, got {val!r}")
    if where == "" and isinstance(cfg.get("grid"), dict):
        _validate(cfg["grid"], GRID_SCHEMA, "grid.")


def load_config(args: argparse.Namespace) -> tuple[dict, set]:
    """Merge defaults, the config file and command-line overrides, then validate.

    Also returns the set of keys set explicitly by the file or by flags.
    """
    cfg = json.loads(json.dumps(DEFAULTS))
    explicit = set()
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {args.config} does not parse: {exc}") from None
        if not isinstance(user, dict):
            raise InputError("config must be a JSON object")
        _validate(user, SCHEMA)
        grid = dict(cfg["grid"])
        grid.update(user.get("grid", {}))
        cfg.update(user)
        cfg["grid"] = grid
        explicit |= set(user)
    flags = {"out": args.out, "mode": getattr(args, "mode", None), "target": getattr(args, "target", None),
             "preview": getattr(args, "preview", None), "reg": getattr(args, "reg", None),
             "trials": getattr(args, "trials", None)}
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
            explicit.add(k)
    if args.strict:
        cfg["strict"] = True
    if args.grid_points is not None:
        cfg["grid"]["count"] = args.grid_points
        explicit.add("grid")
    _validate(cfg, SCHEMA)
    return cfg, explicit


def config_hash(cfg: dict) -> str:
    """Hash of the effective settings; the output location is not part of it."""
    blob = json.dumps({k: v for k, v in cfg.items() if k != "out"}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_lines(cfg: dict, command: str) -> list[str]:
    return [f"mimo-ilc {__version__} command={command} config={config_hash(cfg)}"]


def header_dict(cfg: dict, command: str) -> dict:
    return {"tool": "mimo-ilc", "version": __version__, "command": command,
            "config_hash": config_hash(cfg)}


def _with_header(text: str, header: dict) -> str:
    d = json.loads(text)
    d["header"] = header
    return json.dumps(d, indent=1, sort_keys=True) + "\n"


def _need(cfg: dict, key: str, what: str) -> Path:
    if not cfg.get(key):
        raise InputError(f"{what} required (config key {key!r})")
    p = Path(cfg[key])
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def load_model(path: Path) -> TransferMatrix:
    return TransferMatrix.from_json(path.read_text())


def load_frf(path: Path) -> FrfMatrix:
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return FrfMatrix.from_json(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"FRF JSON {path} does not parse: {exc}") from None
    return FrfMatrix.from_csv(text)


def load_design(path: Path) -> syn.IlcDesign:
    try:
        return syn.IlcDesign.from_json(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"design JSON {path} does not parse: {exc}") from None


def load_reference(path: Path) -> np.ndarray:
    """CSV with header ``k, r_1, ..., r_n``; ``#`` lines are comments."""
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) < 2:
        raise InputError(f"reference {path} has no samples")
    header = [h.strip() for h in lines[0].split(",")]
    if header[0] != "k" or len(header) < 2:
        raise InputError(f"reference {path} header must be 'k,r_1,...'")
    try:
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InputError(f"reference {path} contains a non-numeric value: {exc}") from None
    return data[:, 1:]


def make_grid(cfg: dict, ts: float) -> FrequencyGrid:
    g = cfg["grid"]
    if "omega" in g:
        return FrequencyGrid(np.asarray(g["omega"], dtype=float), ts)
    if g.get("spacing", "log") == "linear":
        return FrequencyGrid(np.linspace(0.0, np.pi, g["count"]), ts)
    return FrequencyGrid.default(ts, count=g["count"], f_min_hz=g.get("f_min_hz", 0.1))


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- commands ----------------------------------------------------------------


def cmd_frf(cfg: dict) -> int:
    model = load_model(_need(cfg, "model", "model file"))
    grid = make_grid(cfg, model.ts)
    frf = evaluate_frf(model, grid)
    out = Path(cfg["out"])
    _write(out / "frf.csv", frf.to_csv(comments=header_lines(cfg, "frf")))
    _write(out / "frf.json", _with_header(frf.to_json(), header_dict(cfg, "frf")))
    print(f"wrote {out / 'frf.csv'} ({len(grid)} points)")
    return EXIT_OK


def cmd_analyze(cfg: dict) -> int:
    J_frf = load_frf(_need(cfg, "frf", "FRF file"))
    design = load_design(_need(cfg, "design", "design file"))
    if design.n != J_frf.shape[0]:
        raise InputError(f"design has {design.n} loops but the FRF is {J_frf.shape}")
    rep = an.convergence_report(design.q_response(J_frf.omega), design.L.response(J_frf.omega), J_frf)
    out = Path(cfg["out"])
    hdr = header_lines(cfg, "analyze")
    _write(out / "analysis.csv", _csv_text(rep.columns(), rep.rows(), hdr))
    summary = dict(rep.summary(), header=header_dict(cfg, "analyze"))
    _write(out / "analysis.json", json.dumps(cs._jsonable(summary), indent=1, sort_keys=True) + "\n")
    print(rep.verdict_line())
    joint = rep.joint.verdict_convergent if cfg["target"] == "convergent" else rep.joint.verdict_monotone
    if cfg["strict"] and not joint:
        return EXIT_STRICT
    return EXIT_OK


def cmd_design(cfg: dict) -> int:
    if cfg["mode"] == "alg3" and not cfg.get("model"):
        raise InputError("centralized mode requires full MIMO model")
    J_frf = load_frf(_need(cfg, "frf", "FRF file"))
    model = None
    L = None
    if cfg.get("model"):
        model = load_model(_need(cfg, "model", "model file"))
    else:
        # no parametric model: invert the diagonal of the measured FRF per loop
        L = syn.invert_frf_to_fir(J_frf.diagonal(), cfg["preview"], cfg["reg"])
    d = syn.build_design(cfg["mode"], model, J_frf, K=cfg["preview"], reg=cfg["reg"],
                         target=cfg["target"], order=cfg["order"], fir_points=cfg["fir_points"], L=L)
    out = Path(cfg["out"])
    _write(out / "design.json", _with_header(d.to_json(), header_dict(cfg, "design")))
    fc = " ".join(f"{f:.1f}" for f in d.cutoffs)
    print(f"mode={d.mode} cutoffs_hz=[{fc}] {d.report.verdict_line()}")
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    design = load_design(_need(cfg, "design", "design file"))
    S = load_model(_need(cfg, "s_model", "sensitivity model file"))
    J = load_model(_need(cfg, "j_model", "process sensitivity model file"))
    r = load_reference(_need(cfg, "reference", "reference file"))
    N = r.shape[0]
    S_op, J_op = lift(S, N), lift(J, N)
    L_op, Q_op = lift_design(design, N)
    gamma = lifted_gamma(iteration_operator(L_op, Q_op, J_op))
    try:
        fp = fixed_points((L_op, Q_op), S_op, J_op, r, gamma=gamma)
    except NumericalError:
        fp = None
    f_inf = fp.f if fp is not None else None
    recs = run_trials((L_op, Q_op), S_op, J_op, r, cfg["trials"], f_inf=f_inf)
    audit = monotonicity_audit(recs, f_inf, gamma) if f_inf is not None else None
    out = Path(cfg["out"])
    hdr = header_lines(cfg, "simulate")
    _write(out / "trials.csv", trials_csv(recs, comments=hdr))
    for rec in recs:
        _write(out / f"trial_{rec.trial}_signals.csv", signals_csv(rec, comments=hdr))
    summary = {
        "header": header_dict(cfg, "simulate"),
        "N": N,
        "trials": len(recs),
        "gamma_lift": gamma,
        "e_inf_F": float(np.linalg.norm(fp.e)) if fp is not None else None,
        "diverged": any(rec.diverged for rec in recs),
        "monotone_audit": audit.monotone if audit is not None else False,
        "audit_ratios": audit.ratios.tolist() if audit is not None else [],
    }
    _write(out / "simulate.json", json.dumps(cs._jsonable(summary), indent=1, sort_keys=True) + "\n")
    e_inf = summary["e_inf_F"]
    print(f"monotone_audit={str(summary['monotone_audit']).lower()} diverged={str(summary['diverged']).lower()} "
          f"gamma_lift={gamma:.6f} e_inf_F={'nan' if e_inf is None else f'{e_inf:.6g}'}")
    return EXIT_OK


def cmd_casestudy(cfg: dict, explicit: set = frozenset()) -> int:
    over = json.loads(json.dumps(cfg["scenario"]))
    design = over.setdefault("design", {})
    # explicit flags win over the scenario file
    for key, dest in (("preview", "K"), ("reg", "reg"), ("target", "target"), ("fir_points", "fir_points")):
        if key in explicit:
            design[dest] = cfg[key]
    if "mode" in explicit:
        design["modes"] = [cfg["mode"]]
    if "grid" in explicit:
        over.setdefault("analysis", {})["grid_points"] = cfg["grid"]["count"]
    sc = cs.load_scenario(over)
    rep = cs.run_procedure2(sc)
    rep.write(cfg["out"], comments=header_lines(cfg, "casestudy"), header=header_dict(cfg, "casestudy"))
    print("mode,fc_1,fc_2,e_inf_F,convergent,monotone")
    for row in rep.table1_rows():
        print(f"{row[0]},{row[1]:.1f},{row[2]:.1f},{row[3]:.6g},{row[4]},{row[5]}")
    return EXIT_OK


COMMANDS = {"frf": cmd_frf, "analyze": cmd_analyze, "design": cmd_design,
            "simulate": cmd_simulate, "casestudy": cmd_casestudy}


def build_parser() -> argparse.ArgumentParser:
    # suppressed defaults keep a flag given before the command from being reset after it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--grid-points", type=int, help="number of log-spaced grid points")
    common.add_argument("--strict", action="store_true", help="exit 4 when the verdict is false")
    p = argparse.ArgumentParser(prog="mimo-ilc", parents=[common],
                                description="Frequency-domain MIMO iterative learning control design.")
    p.add_argument("--version", action="version", version=f"mimo-ilc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], argument_default=argparse.SUPPRESS)
        if name in ("design", "casestudy"):
            sp.add_argument("--mode", choices=syn.MODES)
            sp.add_argument("--preview", type=int, help="FIR preview K (taps on each side)")
            sp.add_argument("--reg", type=float, help="relative Tikhonov regularization")
        if name in ("design", "analyze", "casestudy"):
            sp.add_argument("--target", choices=syn.TARGETS)
        if name == "simulate":
            sp.add_argument("--trials", type=int)
    return p


def parse_args(argv=None) -> argparse.Namespace:
    """Parse the command line, filling options that were suppressed."""
    args = build_parser().parse_args(argv)
    for k in ("config", "out", "grid_points"):
        if not hasattr(args, k):
            setattr(args, k, None)
    if not hasattr(args, "strict"):
        args.strict = False
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        cfg, explicit = load_config(args)
        if args.command == "casestudy":
            return cmd_casestudy(cfg, explicit)
        return COMMANDS[args.command](cfg)
    except NoFeasibleCutoff as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, IlcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
