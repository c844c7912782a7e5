"""Command-line entry point: solve, verify, oracle-verify, sample-net, bench, parse."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import shlex
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from .ir import ChcDocument, GuardOverlap, ParseError, lower_document, parse_chc, parse_formula, \
    print_document, to_dnf
from .lia import negate_dnf
from .orchestrate import SolveConfig, smt_verifier, solve
from .sampling import NetParams, ellipsoid_vc, epsilon_net_size, randomized_epsilon_net
from .smt import Solver, SolverError
from .verify import OracleTooLarge, brute_force_verify, verifier

log = logging.getLogger("annealinv")

EXIT_OK, EXIT_USAGE, EXIT_NO_INVARIANT, EXIT_SOLVER = 0, 1, 2, 3
STATUS_EXIT = {"Invariant": EXIT_OK, "SaFail": EXIT_NO_INVARIANT,
               "Exhausted": EXIT_NO_INVARIANT, "SolverError": EXIT_SOLVER}
BENCH_COLUMNS = ("benchmark", "status", "iterations", "seconds", "seed")


class UsageError(ValueError):
    pass


def _parse_k_list(v) -> tuple:
    if isinstance(v, str):
        v = v.replace(",", " ").split()
    return tuple(int(k) for k in v)


# key -> (section, converter); section None marks run-level keys
KEYS = {
    "d": ("solve", int), "c": ("solve", int), "eps0": ("solve", Fraction),
    "delta0": ("solve", Fraction), "t_refine": ("solve", int), "ds_t_max": ("solve", int),
    "seed": ("solve", int),
    "t_max": ("anneal", int), "t_check": ("anneal", int), "a0": ("anneal", float),
    "eps_T": ("anneal", float), "t_rw": ("anneal", int), "l0": ("anneal", int),
    "alpha": ("anneal", float), "beta": ("anneal", float), "workers": ("anneal", int),
    "k_list": ("anneal", _parse_k_list), "parallel": ("anneal", str),
    "cex_max": ("verify", int), "d0": ("verify", int), "k0": ("verify", int),
    "solver_timeout_ms": ("verify", int), "oracle_limit": ("verify", int),
    "solver": (None, str), "solver_args": (None, str), "audit_dir": (None, str),
    "int_bound": (None, int),
}


def default_hyperparameters() -> SolveConfig:
    return SolveConfig()


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in KEYS:
            raise UsageError(f"{path}:{lineno}: expected 'key = value' with a known key")
        out[key] = value.strip()
    return out


def _convert(settings: dict) -> dict:
    out = {}
    for key, value in settings.items():
        try:
            out[key] = KEYS[key][1](value) if isinstance(value, str) else value
        except (ValueError, ZeroDivisionError) as e:
            raise UsageError(f"bad value for {key}: {value!r}") from e
    return out


def build_config(settings: dict) -> tuple[SolveConfig, dict]:
    """Apply converted settings over the defaults; returns the config and
    the run-level extras (solver, int_bound, ...)."""
    settings = _convert(settings)
    base = default_hyperparameters()
    parts = {"solve": {}, "anneal": {}, "verify": {}}
    extras = {}
    for key, value in settings.items():
        section = KEYS[key][0]
        if section is None:
            extras[key] = value
        else:
            parts[section][key] = value
    a = parts["anneal"]
    if "workers" in a and "k_list" not in a:
        ks = base.anneal.k_list
        a["k_list"] = tuple(ks[i % len(ks)] for i in range(a["workers"]))
    if "k_list" in a and "workers" not in a:
        a["workers"] = len(a["k_list"])
    try:
        anneal = dataclasses.replace(base.anneal, **a)
        ver = dataclasses.replace(base.verify, **parts["verify"])
        cfg = dataclasses.replace(base, anneal=anneal, verify=ver, **parts["solve"])
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e
    return cfg, extras


def effective_config(cfg: SolveConfig, extras: dict) -> dict:
    """Flat, JSON-ready view of every setting in force."""
    out = {}
    for key, (section, _) in KEYS.items():
        if section is None:
            value = extras.get(key)
        else:
            holder = cfg if section == "solve" else getattr(cfg, section)
            value = getattr(holder, key)
        if isinstance(value, Fraction):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value file; flags override it")
    g = p.add_argument_group("hyperparameters")
    for key in KEYS:
        g.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V")


def _settings(args) -> dict:
    settings = read_config_file(args.config) if args.config else {}
    for key in KEYS:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    return settings


def _load(path: str, int_bound: int | None = None):
    doc = parse_chc(Path(path).read_text())
    return doc, lower_document(doc, int_bound=int_bound)


def _solver(extras: dict, cfg: SolveConfig) -> Solver:
    args = tuple(shlex.split(extras["solver_args"])) if extras.get("solver_args") else ("-in", "-smt2")
    return Solver(extras.get("solver"), args, cfg.verify.solver_timeout_ms, extras.get("audit_dir"))


def _read_invariant(path: str, doc: ChcDocument):
    return to_dnf(parse_formula(Path(path).read_text(), doc.variables), doc.variables)


def _print_kv(title: str, items: dict, out):
    print(f"{title}:", file=out)
    for k, v in items.items():
        print(f"  {k} = {v}", file=out)


# ---------------------------------------------------------------------------
# subcommands

def cmd_parse(args) -> int:
    doc, system = _load(args.input)
    if args.json:
        print(json.dumps({"variables": list(doc.variables), "int_bound": system.space.int_bound,
                          "pre": list(system.pre.shape), "post": list(system.post.shape),
                          "trans": system.trans.shape}))
    else:
        print(print_document(doc))
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg, extras = build_config(_settings(args))
    doc, system = _load(args.input, extras.get("int_bound"))
    conf = effective_config(cfg, extras)
    trace_fh = open(args.trace, "w") if args.trace else None
    tele_fh = open(args.telemetry, "w") if args.telemetry else None

    def on_iteration(t, data, rec):
        if trace_fh:
            trace_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            trace_fh.flush()

    def on_telemetry(t, records):
        if tele_fh:
            for r in records:
                tele_fh.write(json.dumps({"iteration": t, **r}, sort_keys=True) + "\n")

    try:
        try:
            verify = smt_verifier(cfg.verify, _solver(extras, cfg))
        except SolverError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_SOLVER
        out = solve(system, cfg, verify, doc.variables, on_iteration, on_telemetry)
    finally:
        for fh in (trace_fh, tele_fh):
            if fh:
                fh.close()
    rec = out.record()
    if args.json:
        print(json.dumps({"config": conf, "result": rec}, sort_keys=True))
    else:
        _print_kv("config", conf, sys.stdout)
        print(f"status: {out.status}")
        print(f"iterations: {out.iterations}")
        if rec["invariant"]:
            print(f"invariant (dnf): {rec['invariant']['dnf']}")
            print(f"invariant (smtlib): {rec['invariant']['smtlib']}")
    if out.error:
        print(f"error: {out.error}", file=sys.stderr)
    return STATUS_EXIT[out.status]


def _report_cex(correct: bool, cex, args) -> int:
    def pts(s):
        return sorted([list(p) for p in s])

    if args.json:
        print(json.dumps({"valid": correct, "counts": cex.counts,
                          "plus": pts(cex.plus_cex), "minus": pts(cex.minus_cex),
                          "implications": sorted([[list(h), list(t)] for h, t in cex.ice_cex])},
                         sort_keys=True))
    else:
        print("valid" if correct else "invalid")
        for k, v in cex.counts.items():
            print(f"  {k}: {v}")
    return EXIT_OK if correct else EXIT_NO_INVARIANT


def cmd_verify(args) -> int:
    cfg, extras = build_config(_settings(args))
    doc, system = _load(args.input, extras.get("int_bound"))
    inv = _read_invariant(args.invariant, doc)
    try:
        correct, cex = verifier(inv, system, cfg.verify, _solver(extras, cfg),
                                np.random.default_rng(cfg.seed))
    except SolverError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    return _report_cex(correct, cex, args)


def cmd_oracle(args) -> int:
    cfg, extras = build_config(_settings(args))
    doc, system = _load(args.input, extras.get("int_bound"))
    inv = _read_invariant(args.invariant, doc)
    correct, cex = brute_force_verify(inv, system, cfg.verify)
    return _report_cex(correct, cex, args)


def cmd_sample_net(args) -> int:
    cfg, extras = build_config(_settings(args))
    doc, system = _load(args.input, extras.get("int_bound"))
    formula = {"pre": system.pre, "guard": system.guard,
               "negpost": negate_dnf(system.post)}[args.region]
    eps = Fraction(args.epsilon) if args.epsilon else cfg.eps0
    p = NetParams(eps, cfg.delta0, ellipsoid_vc(system.dim))
    pts = sorted(randomized_epsilon_net(formula, p, system.space, np.random.default_rng(cfg.seed)))
    if args.json:
        print(json.dumps({"region": args.region, "epsilon": str(eps), "per_cube": epsilon_net_size(p),
                          "points": [list(q) for q in pts]}))
    else:
        for q in pts:
            print(" ".join(map(str, q)))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg, extras = build_config(_settings(args))
    files = sorted(Path(args.corpus).glob("*.chc"))
    if not files:
        raise UsageError(f"no .chc files in {args.corpus}")
    try:
        solver = _solver(extras, cfg)
    except SolverError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(out, fieldnames=BENCH_COLUMNS)
    writer.writeheader()
    records = []
    worst = EXIT_OK
    try:
        for f in files:
            tick = time.perf_counter()
            try:
                doc, system = _load(str(f), extras.get("int_bound"))
                res = solve(system, cfg, smt_verifier(cfg.verify, solver), doc.variables)
                status, iters, rec = res.status, res.iterations, res.record()
            except (ParseError, GuardOverlap) as e:
                status, iters, rec = "ParseError", 0, {"error": str(e)}
            row = {"benchmark": f.stem, "status": status, "iterations": iters,
                   "seconds": f"{time.perf_counter() - tick:.3f}", "seed": cfg.seed}
            writer.writerow(row)
            out.flush()
            records.append({"benchmark": f.stem, **rec})
            worst = max(worst, STATUS_EXIT.get(status, EXIT_USAGE))
    finally:
        if args.out:
            out.close()
    if args.json:
        print(json.dumps({"config": effective_config(cfg, extras), "results": records},
                         sort_keys=True), file=sys.stderr)
    return worst


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="annealinv", description="Loop-invariant inference for "
                                "bounded linear CHC systems by annealing over sampled data.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, input_=True, json_=True):
        sp = sub.add_parser(name, help=help_)
        if input_:
            sp.add_argument("input", help="CHC system file")
        if json_:
            sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.set_defaults(fn=fn)
        return sp

    add("parse", cmd_parse, "parse and lower a system, print it normalized")
    sp = add("solve", cmd_solve, "search for an invariant")
    sp.add_argument("--trace", help="write one JSON record per iteration to this file")
    sp.add_argument("--telemetry", help="write annealer telemetry as JSON lines")
    _add_config_flags(sp)
    for name, fn, h in (("verify", cmd_verify, "check an invariant with the SMT solver"),
                        ("oracle-verify", cmd_oracle, "check an invariant by enumerating the box")):
        sp = add(name, fn, h)
        sp.add_argument("invariant", help="file holding a formula over the system's variables")
        _add_config_flags(sp)
    sp = add("sample-net", cmd_sample_net, "draw an epsilon-net from one region")
    sp.add_argument("--region", choices=("pre", "guard", "negpost"), default="guard")
    sp.add_argument("--epsilon", help="net parameter (defaults to eps0)")
    _add_config_flags(sp)
    sp = add("bench", cmd_bench, "solve every .chc file in a directory, CSV summary", input_=False)
    sp.add_argument("corpus", help="directory of .chc files")
    sp.add_argument("--out", help="CSV path (default stdout)")
    _add_config_flags(sp)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ParseError, GuardOverlap, UsageError, OSError, OracleTooLarge) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
