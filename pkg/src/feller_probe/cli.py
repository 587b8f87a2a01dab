"""Command-line entry point: ``feller-probe <subcommand> ...``.

Structured results are printed as JSON (or written to ``--out`` together with
a ``.manifest.json`` file); time series go to CSV. Exit codes: 0 success,
1 negative outcome (condition fails, nothing found), 2 invalid input,
3 hypothesis failure, 4 numerical or search failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .canonical import canonicalize
from .certify import Certificate, certify_c2, certify_c22
from .errors import ClassError, FellerProbeError, InputError
from .feller import check_c2_violation_profile, check_c22_violation_profile, check_canonical_feller
from .model import SdeModel, bundled_models, classify, is_canonical, is_proportional, load_bundled, resolve_model
from .montecarlo import SimConfig, control_experiment, negativity_experiment, simulate
from .novikov import check_addreq, classify_2x2_cases, constants, find_diag_shift, partition
from .odeexp import evaluate, integrate_system, solve_expectation

log = logging.getLogger("feller_probe")

EXIT_OK, EXIT_NEGATIVE = 0, 1
REPRODUCE_CASES = {"c22": "c22_violating", "c2": "c2_violating", "feller-control": "feller_control"}


@dataclass
class RunManifest:
    subcommand: str
    input_path: str | None
    flags: dict[str, Any]
    output_paths: list[str] = field(default_factory=list)
    config_hash: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "input_path": self.input_path,
            "flags": self.flags,
            "output_paths": self.output_paths,
            "versions": {"feller_probe": __version__, "numpy": np.__version__, "config_hash": self.config_hash},
        }


def config_hash(model: SdeModel | None, flags: dict[str, Any]) -> str:
    payload = {"model": model.to_dict() if model is not None else None, "flags": flags}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# -- argument parsing helpers -------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if not (step > 0 and stop >= start >= 0):
        raise argparse.ArgumentTypeError("grid needs 0 <= start <= stop and step > 0")
    n = int(math.floor((stop - start) / step + 1e-9))
    return start + step * np.arange(n + 1)


def _positive(kind):
    def parse(text: str):
        val = kind(text)
        if not val > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val

    return parse


# -- subcommands ---------------------------------------------------------------


def cmd_check_feller(model: SdeModel, args) -> tuple[dict[str, Any], int]:
    cls = classify(model)
    out: dict[str, Any] = {"class": cls.to_dict()}
    target = model
    if not is_canonical(model):
        if not is_proportional(model):
            raise ClassError("model is neither canonical nor proportional; no canonical form is available")
        transform = canonicalize(model)
        out["transform"] = transform.to_dict()
        target = transform.transformed
    report = check_canonical_feller(target)
    out["report"] = report.to_dict()
    if target.p == 2 and is_canonical(target):
        prof = check_c2_violation_profile(target) if is_proportional(target) else (
            check_c22_violation_profile(target) if target.m == 2 else None
        )
        if prof is not None:
            out["violation_profile"] = {k: v for k, v in prof.to_dict().items() if k != "related"}
    return out, EXIT_OK if report.overall else EXIT_NEGATIVE


def cmd_canonicalize(model: SdeModel, args) -> tuple[dict[str, Any], int]:
    return canonicalize(model).to_dict(), EXIT_OK


def cmd_expectation(model: SdeModel, args) -> tuple[str, int]:
    if model.p != 2:
        raise InputError("expectation needs a 2-dimensional model")
    sol = solve_expectation(model.a, model.b, *model.x0)
    times = args.grid
    xs = np.atleast_1d(evaluate(sol, times))
    _, ys = integrate_system(model.a, model.b, model.x0, times)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "y"])
    for t, x, y in zip(times, xs, ys):
        w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
    return buf.getvalue(), EXIT_OK


def _certify(model: SdeModel, t0: float) -> Certificate:
    if model.p != 2 or not is_canonical(model):
        raise ClassError("certificates are available for canonical 2-dimensional models")
    if is_proportional(model):
        return certify_c2(model, t0)
    return certify_c22(model, t0)


def cmd_certify(model: SdeModel, args) -> tuple[dict[str, Any], int]:
    return _certify(model, args.t0).to_dict(), EXIT_OK


def cmd_novikov_schedule(model: SdeModel, args) -> tuple[dict[str, Any], int]:
    part = partition(model, args.c, args.horizon)
    return {"constants": constants(model, args.c).to_dict(), "partition": part.to_dict()}, EXIT_OK


def cmd_check_addreq(model: SdeModel, args) -> tuple[dict[str, Any], int]:
    m = args.m or model.m
    holds, witness = check_addreq(model.a, m)
    out: dict[str, Any] = {
        "m": m,
        "holds": holds,
        "result": "found" if holds else "not found",
        "witness": None if witness is None else witness.tolist(),
    }
    if m == 2:
        out["cases"] = sorted(classify_2x2_cases(model.a[:2, :2]))
    if is_canonical(model):
        out["diag_shift"] = find_diag_shift(model).tolist()
    return out, EXIT_OK if holds else EXIT_NEGATIVE


def cmd_simulate(model: SdeModel, args) -> tuple[dict[str, Any], int]:
    cfg = SimConfig(args.t, args.dt, args.paths, args.seed)
    lam = args.lam if args.lam is not None else [0.0] * model.p
    res = simulate(model, cfg, lam, stopped=args.stopped)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "mean_V", "se", "frac_negative"])
            for row in res.csv_rows():
                w.writerow([repr(v) for v in row])
    return res.to_dict(), EXIT_OK


def run_reproduce(case: str, t0: float, paths: int, seed: int, dt: float) -> dict[str, Any]:
    """Feller check, expectation, certificate and Monte Carlo for one bundled scenario."""
    name = REPRODUCE_CASES[case]
    model = load_bundled(name)
    cfg = SimConfig(t0, dt, paths, seed)
    report: dict[str, Any] = {"case": case, "model_name": name, "model": model.to_dict(), "config": cfg.to_dict()}
    report["feller"] = check_canonical_feller(model).to_dict()
    sol = solve_expectation(model.a, model.b, *model.x0)
    report["expectation"] = {"solution": sol.to_dict(), "x_t0": float(evaluate(sol, t0))}
    if case == "feller-control":
        exp = control_experiment(model, cfg, t0)
        report["monte_carlo"] = exp
        report["pass"] = exp["pass"]
        report["summary"] = (
            f"{name}: Feller conditions {'hold' if report['feller']['overall'] else 'fail'}; "
            f"{exp['count_V_negative']} of {exp['n_paths']} paths have V_1(t0) < 0 at t0 = {t0:g}"
        )
        return report
    profile = check_c2_violation_profile(model) if case == "c2" else check_c22_violation_profile(model)
    report["violation_profile"] = {k: v for k, v in profile.to_dict().items() if k != "related"}
    cert = _certify(model, t0)
    report["certificate"] = cert.to_dict()
    exp = negativity_experiment(model, cert, cfg)
    report["monte_carlo"] = exp
    report["pass"] = exp["pass"]
    report["summary"] = (
        f"{name}: tilted E V_1(t0) = {cert.expected_value:.6g} < 0; "
        f"{exp['statistic']} estimate {exp['estimate']:.4g} "
        f"({exp['count']}/{exp['n_paths']}), 99% lower bound {exp['lower_bound']:.4g}"
    )
    return report


def cmd_reproduce(model: SdeModel | None, args) -> tuple[dict[str, Any], int]:
    report = run_reproduce(args.case, args.t0, args.paths, args.seed, args.dt)
    print(report["summary"], file=sys.stderr)
    return report, EXIT_OK if report["pass"] else EXIT_NEGATIVE


def cmd_list_models(model: SdeModel | None, args) -> tuple[dict[str, Any], int]:
    return {"models": bundled_models()}, EXIT_OK


# -- wiring --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feller-probe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name: str, func, help: str, model: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        if model:
            p.add_argument("model", help="model JSON file or bundled model name")
        p.add_argument("--out", help="write the result here (plus a .manifest.json) instead of stdout")
        p.set_defaults(func=func, needs_model=model)
        return p

    add("check-feller", cmd_check_feller, "weak Feller conditions (proportional models are canonicalized first)")
    add("canonicalize", cmd_canonicalize, "affine map of a proportional model into canonical form")
    p = add("expectation", cmd_expectation, "CSV of E X_1 (closed form) and E X_2 (integrated) on a time grid")
    p.add_argument("--grid", type=_grid, required=True, metavar="START:STOP:STEP")
    p = add("certify", cmd_certify, "tilt certificate making E V_1(t0) negative")
    p.add_argument("--t0", type=_positive(float), required=True)
    p = add("novikov-schedule", cmd_novikov_schedule, "Novikov constants and time partition")
    p.add_argument("--c", type=_positive(float), required=True)
    p.add_argument("--horizon", type=_positive(float), required=True)
    p = add("check-addreq", cmd_check_addreq, "search positive weights for the moment condition of the drift block")
    p.add_argument("--m", type=_positive(int), default=None, help="block size (defaults to the model's m)")
    p = add("simulate", cmd_simulate, "Euler Monte Carlo with an optional density process")
    p.add_argument("--t", type=_positive(float), default=1.0, help="horizon")
    p.add_argument("--dt", type=_positive(float), default=1e-3)
    p.add_argument("--paths", type=_positive(int), default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=_floats, default=None, metavar="L1,L2,...")
    p.add_argument("--stopped", action="store_true", help="freeze the density once V_1 < 0")
    p.add_argument("--csv", help="also write a (t, mean_V, se, frac_negative) time series")
    p = add("reproduce", cmd_reproduce, "end-to-end run on a bundled scenario", model=False)
    p.add_argument("--case", choices=sorted(REPRODUCE_CASES), required=True)
    p.add_argument("--t0", type=_positive(float), default=1.0)
    p.add_argument("--paths", type=_positive(int), default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=_positive(float), default=1e-3)
    add("list-models", cmd_list_models, "names of the bundled example models", model=False)
    return parser


def _flags(args: argparse.Namespace) -> dict[str, Any]:
    skip = {"func", "needs_model", "model", "out", "verbose", "command"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def _emit(result: Any, args: argparse.Namespace, model: SdeModel | None) -> None:
    text = result if isinstance(result, str) else _dumps(result)
    if not args.out:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    out.write_text(text)
    flags = _flags(args)
    outputs = [str(out)] + ([args.csv] if getattr(args, "csv", None) else [])
    manifest = RunManifest(
        subcommand=args.command,
        input_path=getattr(args, "model", None),
        flags=flags,
        output_paths=outputs,
        config_hash=config_hash(model, flags),
    )
    out.with_name(out.name + ".manifest.json").write_text(_dumps(manifest.to_dict()))


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        model = resolve_model(args.model) if args.needs_model else None
        result, code = args.func(model, args)
        _emit(result, args, model)
        return code
    except FellerProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
