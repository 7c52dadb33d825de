"""``ltv-certify``: batch front end writing one JSON report to standard output.

Exit codes: 0 ok or certified, 1 refuted (or a failed check), 2 configuration
error, 3 numeric failure, 4 inconclusive.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .duality import verify_gramian_identities
from .envelope import (CERTIFIED, INCONCLUSIVE, REFUTED, DEFAULT_MAX_LAG, DEFAULT_SIGMAS,
                       CertificateVerdict, NuesEnvelope, certify_gramian_envelope, certify_kalman,
                       certify_nues, default_t_grid, fit_growth_envelope)
from .expr import ZERO, EvaluationError, ExprError, evaluate, parse_expr, substitute
from .gramian import KINDS, QuadratureError, gramian
from .ode import PropagationError
from .report import body, build_report, digest_bytes, dumps
from .riccati import (ObserverGain, PreconditionError, RiccatiError, simulate_observer,
                      synthesize_observer)
from .scenarios import get_scenario, list_scenarios, run_scenario
from .system import ConfigError, LtvSystem, system_from_config

EXIT_OK, EXIT_REFUTED, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4
STATUS_EXIT = {CERTIFIED: EXIT_OK, REFUTED: EXIT_REFUTED, INCONCLUSIVE: EXIT_INCONCLUSIVE}
PROPERTIES = ("growth", "kalman", "ucc", "nucc", "uco", "nuco", "nues-forward", "nues-backward")
JOBS_ENV = "LTV_CERTIFY_JOBS"


class UsageError(ValueError):
    pass


# -- parsing helpers ------------------------------------------------------------------


def parse_number(text: str) -> float:
    """A number, a constant expression, or the shorthand ``eX`` for ``e^X``."""
    m = re.fullmatch(r"\s*e(\d+(?:\.\d*)?)\s*", str(text))
    if m:
        return math.exp(float(m.group(1)))
    try:
        return float(text)
    except ValueError:
        pass
    try:
        node = parse_expr(text)
        if substitute(node, ZERO) != node:
            raise UsageError(f"not a constant: {text!r}")
        return float(evaluate(node, 0.0))
    except (ExprError, EvaluationError) as exc:
        raise UsageError(f"not a number: {text!r} ({exc})") from None


def parse_grid(spec) -> np.ndarray:
    """``min:max:points``, a comma list, or a ``{"min", "max", "points"}`` object."""
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["min"]), float(spec["max"]), int(spec["points"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad grid object {spec!r}") from exc
    if isinstance(spec, (list, tuple)):
        return np.asarray([float(v) for v in spec])
    text = str(spec)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} is not min:max:points")
        lo, hi = parse_number(parts[0]), parse_number(parts[1])
        try:
            k = int(parts[2])
        except ValueError:
            raise UsageError(f"grid {text!r}: points must be an integer") from None
        if k < 2 or not lo < hi:
            raise UsageError(f"grid {text!r} needs min < max and at least 2 points")
        return np.linspace(lo, hi, k)
    return np.asarray([parse_number(p) for p in text.split(",") if p.strip()])


def parse_vector(text: str) -> list:
    return [parse_number(p) for p in str(text).split(",")]


def _max_lag(text):
    if text is None:
        return DEFAULT_MAX_LAG
    if str(text).lower() in ("none", "inf", "all"):
        return None
    return parse_number(text)


def resolve_jobs(flag) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get(JOBS_ENV, "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{JOBS_ENV}={env!r} is not an integer") from None
    return 1


class LoadedSystem:
    """A system file plus the optional ``grids`` defaults it carries."""

    def __init__(self, path: str):
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        try:
            cfg = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("system config must be a JSON object")
        self.digest = digest_bytes(raw)
        self.grids = cfg.pop("grids", None) or {}
        if not isinstance(self.grids, dict):
            raise ConfigError("'grids' must be an object")
        self.system = system_from_config(cfg)

    def t_grid(self, flag):
        if flag is not None:
            return parse_grid(flag)
        if "t" in self.grids:
            return parse_grid(self.grids["t"])
        return default_t_grid(self.system.domain)

    def sigma_grid(self, flag):
        if flag is not None:
            return parse_grid(flag)
        if "sigma" in self.grids:
            return parse_grid(self.grids["sigma"])
        return np.asarray(DEFAULT_SIGMAS)

    def max_lag(self, flag):
        if flag is None and "max_lag" in self.grids:
            return _max_lag(self.grids["max_lag"])
        return _max_lag(flag)


def _ode_kw(args) -> dict:
    kw = {}
    if args.tol_rel is not None:
        kw["rtol"] = args.tol_rel
    if args.tol_abs is not None:
        kw["atol"] = args.tol_abs
    return kw


def _common_params(args) -> dict:
    return {"tol_rel": args.tol_rel, "tol_abs": args.tol_abs, "seed": args.seed}


def _grid_list(g) -> list:
    return [float(v) for v in np.asarray(g, dtype=float)]


# -- commands: each returns (parameters, results, exit code, input digest) --------------


def cmd_gramian(args):
    ls = LoadedSystem(args.system)
    kind = args.kind
    if args.t is not None:
        if args.sigma is None:
            raise UsageError("--t needs --sigma")
        t, sigma = args.t, args.sigma
    elif args.t0 is not None and args.tf is not None:
        t, sigma = args.t0, args.tf - args.t0
    else:
        raise UsageError("give --t and --sigma, or --t0 and --tf")
    res = gramian(ls.system, kind, t, sigma, **_ode_kw(args))
    params = {**_common_params(args), "kind": kind, "t": t, "sigma": sigma}
    return params, res.to_dict(), EXIT_OK, ls.digest


def _pair_verdict(a: CertificateVerdict, b: CertificateVerdict) -> str:
    if a.refuted or b.refuted:
        return REFUTED
    if a.certified and b.certified:
        return CERTIFIED
    return INCONCLUSIVE


def _target(args):
    given = [args.target_M, args.target_beta, args.target_delta]
    if all(v is None for v in given):
        return None
    if any(v is None for v in given):
        raise UsageError("a target needs --target-M, --target-beta and --target-delta")
    return [parse_number(v) for v in given]


def cmd_certify(args):
    ls = LoadedSystem(args.system)
    system, prop, kw = ls.system, args.property, _ode_kw(args)
    t_grid = ls.t_grid(args.grid_t)
    max_lag = ls.max_lag(args.max_lag)
    params = {**_common_params(args), "property": prop, "t_grid": _grid_list(t_grid)}
    plant = LtvSystem(system.A, domain=system.domain, name=system.name)
    refine = not args.no_refine

    if prop in ("growth", "kalman"):
        params["max_lag"] = max_lag
        fit = fit_growth_envelope if prop == "growth" else certify_kalman
        v = fit(plant, t_grid, max_lag=max_lag if max_lag is not None else DEFAULT_MAX_LAG,
                refine=refine, **kw)
        return params, {"status": v.status, "certificate": v.to_dict()}, STATUS_EXIT[v.status], \
            ls.digest

    if prop.startswith("nues-"):
        direction = prop.split("-", 1)[1]
        tgt = _target(args)
        target = NuesEnvelope(*tgt, direction) if tgt is not None else None
        params.update({"max_lag": max_lag, "refine": refine,
                       "target": target.to_dict() if target else None})
        v = certify_nues(plant, t_grid, direction, target, max_lag=max_lag, refine=refine, **kw)
        return params, {"status": v.status, "certificate": v.to_dict()}, STATUS_EXIT[v.status], \
            ls.digest

    # Gramian pairs: controllability uses (W, K), observability (M, N)
    sigma = ls.sigma_grid(args.grid_sigma)
    uniform = not prop.startswith("nu")
    kinds = ("W", "K") if prop.endswith("cc") else ("M", "N")
    params.update({"sigma_grid": _grid_list(sigma), "uniform": uniform})
    if uniform and args.grid_sigma is None and "sigma_uniform" in ls.grids:
        sigma = parse_grid(ls.grids["sigma_uniform"])
        params["sigma_grid"] = _grid_list(sigma)
    certs = {}
    for kind in kinds:
        certs[kind] = certify_gramian_envelope(system, kind, t_grid, sigma, uniform=uniform, **kw)
        if certs[kind].refuted:
            break
    first = certs[kinds[0]]
    status = _pair_verdict(first, certs.get(kinds[1], first))
    return params, {"status": status, "certificates": {k: v.to_dict() for k, v in certs.items()}}, \
        STATUS_EXIT[status], ls.digest


def cmd_duality(args):
    ls = LoadedSystem(args.system)
    rep = verify_gramian_identities(ls.system, args.t, args.sigma, args.tol, **_ode_kw(args))
    params = {**_common_params(args), "t": args.t, "sigma": args.sigma, "tol": args.tol}
    return params, rep.to_dict(), EXIT_OK if rep.passed else EXIT_REFUTED, ls.digest


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def cmd_synthesize(args):
    ls = LoadedSystem(args.system)
    window = (args.window[0], args.window[1])
    t_grid = parse_grid(args.grid_t) if args.grid_t is not None else None
    sigma = parse_grid(args.grid_sigma) if args.grid_sigma is not None else None
    params = {**_common_params(args), "window": list(window), "L_param": args.L_param,
              "step": args.step}
    try:
        syn = synthesize_observer(ls.system, window, args.L_param, t_grid=t_grid,
                                  sigma_grid=sigma, step=args.step)
    except PreconditionError as exc:
        if exc.verdict is None:
            raise UsageError(str(exc)) from None
        results = {"status": exc.verdict.status, "error": str(exc),
                   "certificate": exc.verdict.to_dict()}
        return params, results, STATUS_EXIT[exc.verdict.status], ls.digest
    results = syn.to_dict()
    ec = syn.error_certificate
    status = ec.status if ec is not None else CERTIFIED
    results = {"status": status, **results}
    if args.gain:
        gain_doc = {**syn.gain.to_dict(), "system_digest": ls.digest,
                    "envelope": ec.params.to_dict() if ec is not None and ec.certified else None}
        _write_json(args.gain, gain_doc)
        results["gain_file"] = args.gain
    return params, results, STATUS_EXIT[status], ls.digest


def cmd_simulate(args):
    ls = LoadedSystem(args.system)
    try:
        with open(args.gain, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read gain file {args.gain}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in gain file {args.gain}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("gain file must be a JSON object")
    gain = ObserverGain.from_dict(doc)
    env = None
    if doc.get("envelope"):
        e = doc["envelope"]
        env = NuesEnvelope(float(e["M"]), float(e["beta"]), float(e["delta"]),
                           e.get("direction", "forward"))
    x0, xh0 = parse_vector(args.x0), parse_vector(args.xhat0)
    n = ls.system.n
    if len(x0) != n or len(xh0) != n:
        raise UsageError(f"x0 and xhat0 need {n} entries")
    horizon = (args.horizon[0], args.horizon[1])
    tr = simulate_observer(ls.system, gain, x0, xh0, horizon, step=args.step, envelope=env)
    params = {**_common_params(args), "x0": x0, "xhat0": xh0, "horizon": list(horizon),
              "step": args.step, "gain_file": args.gain}
    results = {"summary": tr.summary(), "envelope": env.to_dict() if env else None}
    if args.csv:
        tr.write_csv(args.csv)
        results["trajectory_file"] = args.csv
    code = EXIT_OK
    if env is not None and not tr.within_envelope():
        code = EXIT_REFUTED
    results["status"] = "ok" if code == EXIT_OK else "envelope-violated"
    return params, results, code, ls.digest


def _run_one(name_seed):
    name, seed = name_seed
    return run_scenario(name, seed=seed)


def cmd_scenario(args):
    params = {**_common_params(args), "action": args.action, "names": args.names}
    if args.action == "list":
        return params, {"scenarios": [{"name": n, "citation": c} for n, c in list_scenarios()]}, \
            EXIT_OK, None
    if not args.names:
        raise UsageError(f"scenario {args.action} needs a name")
    if args.action == "config":
        if len(args.names) != 1:
            raise UsageError("scenario config takes one name")
        sc = get_scenario(args.names[0])
        cfg = dict(sc.config)
        grids = {k: sc.grids[k] for k in ("t", "sigma", "sigma_uniform", "max_lag") if k in sc.grids}
        if grids:
            cfg["grids"] = grids
        return params, {"config": cfg}, EXIT_OK, None
    names = sorted(n for n, _ in list_scenarios()) if args.names == ["all"] else list(args.names)
    for n in names:
        get_scenario(n)
    jobs = resolve_jobs(args.jobs)
    todo = [(n, args.seed) for n in names]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(todo))) as pool:
            reports = list(pool.map(_run_one, todo))
    else:
        reports = [_run_one(x) for x in todo]
    reports.sort(key=lambda r: r.name)
    results = {"scenarios": [r.to_dict() for r in reports],
               "all_match": all(r.matches for r in reports)}
    timing = {r.name: r.timings() for r in reports}
    code = EXIT_OK if results["all_match"] else EXIT_REFUTED
    return params, results, code, None, timing


COMMANDS = {"gramian": cmd_gramian, "certify": cmd_certify, "duality": cmd_duality,
            "synthesize": cmd_synthesize, "simulate": cmd_simulate, "scenario": cmd_scenario}


# -- argument parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--tol-rel", type=float, default=None, help="ODE relative tolerance")
    p.add_argument("--tol-abs", type=float, default=None, help="ODE absolute tolerance")
    p.add_argument("--grid-t", default=None, help="time grid: min:max:points or a comma list")
    p.add_argument("--grid-sigma", default=None, help="window lengths (comma list)")
    p.add_argument("--jobs", type=int, default=None,
                   help=f"worker processes (default ${JOBS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=0, help="seed for all sampling (default 0)")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.add_argument("--no-timing", action="store_true", help="omit the timing field")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltv-certify",
                                 description="Gramians, envelope certificates and observer "
                                             "synthesis for linear time-varying systems.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gramian", help="one Gramian matrix")
    p.add_argument("system")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--t", type=parse_number)
    p.add_argument("--sigma", type=parse_number)
    p.add_argument("--t0", type=parse_number)
    p.add_argument("--tf", type=parse_number)
    _common(p)

    p = sub.add_parser("certify", help="certify or refute an envelope property")
    p.add_argument("system")
    p.add_argument("--property", choices=PROPERTIES, required=True)
    p.add_argument("--target-M", default=None, help="number, expression or eX for e^X")
    p.add_argument("--target-beta", default=None)
    p.add_argument("--target-delta", default=None)
    p.add_argument("--max-lag", default=None, help="largest sampled |t - s| ('none' for all)")
    p.add_argument("--no-refine", action="store_true", help="skip grid midpoints")
    _common(p)

    p = sub.add_parser("duality", help="check the Gramian identities on one window")
    p.add_argument("system")
    p.add_argument("--t", type=parse_number, required=True)
    p.add_argument("--sigma", type=parse_number, required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    _common(p)

    p = sub.add_parser("synthesize", help="observer gain through the dual Riccati equation")
    p.add_argument("system")
    p.add_argument("--window", type=parse_number, nargs=2, required=True, metavar=("T0", "T1"))
    p.add_argument("--L-param", dest="L_param", type=parse_number, default=None)
    p.add_argument("--step", type=parse_number, default=None)
    p.add_argument("--gain", default=None, help="gain file to write")
    _common(p)

    p = sub.add_parser("simulate", help="simulate plant and observer")
    p.add_argument("system")
    p.add_argument("--gain", required=True, help="gain file")
    p.add_argument("--x0", required=True)
    p.add_argument("--xhat0", required=True)
    p.add_argument("--horizon", type=parse_number, nargs=2, required=True, metavar=("T0", "T1"))
    p.add_argument("--step", type=parse_number, default=None)
    p.add_argument("--csv", default=None, help="trajectory CSV to write")
    _common(p)

    p = sub.add_parser("scenario", help="worked examples")
    p.add_argument("action", choices=("list", "run", "config"))
    p.add_argument("names", nargs="*", help="scenario names ('all' runs every one)")
    _common(p)
    return ap


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        # exit-code mapping: config problems first, then numeric failures
        out = COMMANDS[args.command](args)
    except (ConfigError, ExprError, UsageError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ltv-certify: configuration error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropagationError, QuadratureError, RiccatiError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"ltv-certify: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"ltv-certify: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    params, results, code, digest = out[:4]
    timing = {"seconds": round(time.perf_counter() - start, 3),
              "jobs": resolve_jobs(getattr(args, "jobs", None))}
    if len(out) > 4:
        timing["stages"] = out[4]
    report = build_report(args.command, digest, params, results, version=__version__,
                          timing=None if args.no_timing else timing)
    _emit(dumps(report), args.out)
    return code


def report_body(text: str) -> dict:
    """Parse a report and drop its timing field (for comparisons)."""
    return body(json.loads(text))


if __name__ == "__main__":
    sys.exit(main())
