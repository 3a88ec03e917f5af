"""Command-line entry point: sweepkit {solve,iterate,bounds,verify,list-scenarios}."""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor

from .bounds import certify
from .config import SCENARIOS, ScenarioConfig, list_scenarios, load_config, parse_config
from .errors import ConfigError, MaxIterationsExceeded, SweepError
from .filippov import iterate
from .stepper import solve_fixed_selection, write_csv
from .verification import CERT_POINTS, json_safe, verify

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MAXITER, EXIT_VERIFY = 0, 2, 3, 4, 5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sweepkit", description="Sweeping-process solver and bound checker.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "iterate", "bounds", "verify"):
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group()
        src.add_argument("--scenario", metavar="NAME")
        src.add_argument("--config", metavar="PATH")
        s.add_argument("--h", type=float)
        s.add_argument("--tol", type=float)
        s.add_argument("--max-iter", type=int)
        s.add_argument("--out", metavar="PATH")
        s.add_argument("--report", metavar="PATH")
        s.add_argument("--dump-config", action="store_true")
        if name == "verify":
            s.add_argument("--all", action="store_true")
    sub.add_parser("list-scenarios")
    return p


def _config(args) -> ScenarioConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.scenario:
        cfg = parse_config({"scenario": args.scenario})
    else:
        raise ConfigError("one of --scenario or --config is required")
    doc = cfg.to_dict()
    if args.h is not None:
        doc["grid"] = {"h": args.h}
    if args.tol is not None:
        doc["iteration"]["tol"] = args.tol
    if args.max_iter is not None:
        doc["iteration"]["max_iter"] = args.max_iter
    return parse_config(doc)


def _emit_json(obj, path):
    text = json.dumps(json_safe(obj), indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(traj, path):
    write_csv(traj, path if path else sys.stdout)


def _out(args, cfg, key):
    return getattr(args, key) or cfg.output.get("csv" if key == "out" else "report")


def run_solve(cfg: ScenarioConfig, out=None) -> int:
    spec = cfg.build()
    grid = cfg.time_grid()
    z = cfg.selection_function(spec, grid)
    traj = solve_fixed_selection(spec, z, grid)
    _emit_csv(traj, out)
    return EXIT_OK


def run_iterate(cfg: ScenarioConfig, out=None, report=None) -> int:
    spec = cfg.build()
    grid = cfg.time_grid()
    cert = certify(spec, grid)
    block = {"certificate": cert.to_dict(CERT_POINTS)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            _, traj, rep = iterate(spec, grid, cfg.iteration["tol"], cfg.iteration["max_iter"], cert=cert)
        except MaxIterationsExceeded as exc:
            _emit_json({**exc.report.to_dict(), **block}, report)
            raise
    if out:
        _emit_csv(traj, out)
    _emit_json({**rep.to_dict(), **block}, report)
    return EXIT_OK


def run_bounds(cfg: ScenarioConfig, report=None) -> int:
    spec = cfg.build()
    _emit_json(certify(spec, cfg.time_grid()).to_dict(CERT_POINTS), report)
    return EXIT_OK


def run_verify(configs: list[ScenarioConfig], out_dir=None, report=None, workers=None) -> int:
    """Verify each config (concurrently when several); merged report in input order."""
    if len(configs) == 1:
        results = [verify(configs[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers or min(len(configs), os.cpu_count() or 1)) as ex:
            results = list(ex.map(verify, configs))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for cfg, (_, traj) in zip(configs, results):
            if traj is not None:
                write_csv(traj, os.path.join(out_dir, f"{cfg.name or 'config'}.csv"))
    dicts = [r.to_dict() for r, _ in results]
    ok = all(r.passed for r, _ in results)
    doc = dicts[0] if len(dicts) == 1 else {"status": "PASS" if ok else "FAIL", "scenarios": dicts}
    _emit_json(doc, report)
    for r, _ in results:
        line = f"{r.scenario or 'config'}: {'PASS' if r.passed else 'FAIL ' + ','.join(r.failed())}"
        print(line, file=sys.stderr)
    return EXIT_OK if ok else EXIT_VERIFY


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-scenarios":
        print("\n".join(list_scenarios()))
        return EXIT_OK
    try:
        if getattr(args, "all", False):
            if args.scenario or args.config:
                raise ConfigError("--all cannot be combined with --scenario or --config")
            configs = [_config(argparse.Namespace(**{**vars(args), "scenario": n})) for n in SCENARIOS]
        else:
            configs = [_config(args)]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        if len(configs) == 1:
            print(configs[0].dumps())
        else:
            print(json.dumps([c.to_dict() for c in configs], indent=2, sort_keys=True))
        return EXIT_OK
    cfg = configs[0]
    try:
        if args.command == "solve":
            return run_solve(cfg, _out(args, cfg, "out"))
        if args.command == "iterate":
            return run_iterate(cfg, _out(args, cfg, "out"), _out(args, cfg, "report"))
        if args.command == "bounds":
            return run_bounds(cfg, _out(args, cfg, "report"))
        return run_verify(configs, args.out, _out(args, cfg, "report") if len(configs) == 1 else args.report)
    except MaxIterationsExceeded as exc:
        print(f"max iterations exceeded: {exc}", file=sys.stderr)
        return EXIT_MAXITER
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SweepError, ValueError, OSError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
