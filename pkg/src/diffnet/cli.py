"""Command line interface: ``diffnet simulate | identify | check | experiment``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import arx, harness
from .pipeline import (CheckFailed, IdentificationError, IdentifyOptions, check_identifiability,
                       check_informativity, identify)
from .simulate import NoiseSpec, UnstableModelError, generate

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_excitation(text: str) -> float:
    """``white:var=1`` -> variance 1.0."""
    kind, _, rest = text.partition(":")
    if kind != "white":
        raise UsageError(f"unsupported excitation {kind!r}; only 'white' is available")
    var = 1.0
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        if key != "var":
            raise UsageError(f"unknown excitation option {key!r}")
        try:
            var = float(value)
        except ValueError:
            raise UsageError(f"bad variance {value!r}") from None
    if var < 0:
        raise UsageError("excitation variance must be non-negative")
    return var


def cmd_simulate(args) -> int:
    cfg = harness.load_network(args.network)
    if args.noiseless:
        cfg = cfg.with_noise(0.0)
    model = cfg.discrete()
    var = parse_excitation(args.excitation)
    r_seed, e_seed = np.random.SeedSequence(args.seed).spawn(2)
    r = np.sqrt(var) * np.random.default_rng(r_seed).standard_normal((model.K, args.samples))
    data = generate(model, r, NoiseSpec(model.Lambda, e_seed))
    harness.write_csv(args.out, data)
    print(f"wrote {data.N} samples of {data.L} nodes and {data.K} excitations to {args.out}")
    return EXIT_OK


def _options(args) -> IdentifyOptions:
    return IdentifyOptions(use_weighting=not args.no_weighting, max_iter=args.max_iter,
                           force=args.force, topology_threshold=args.threshold)


def cmd_identify(args) -> int:
    data = harness.read_csv(args.data, args.ts)
    spec = harness.load_spec(args.spec)
    res = identify(data, spec, args.arx_order, _options(args))
    report = res.to_dict()
    report["topology"]["threshold"] = args.threshold
    with open(args.report, "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"cost trace: {len(res.estimate.cost_trace)} entries, final {res.estimate.cost_trace[-1]:.6g}")
    print("edges: " + ", ".join(f"{j}-{k}" for j, k in report["topology"]["edges"]))
    print(f"report written to {args.report}")
    return EXIT_OK


def cmd_check(args) -> int:
    spec = harness.load_spec(args.spec)
    rep = check_identifiability(spec)
    lines = rep.lines()
    ok = rep.passed
    if args.data:
        data = harness.read_csv(args.data)
        depth = args.depth or arx.row_dim(spec.L, spec.K, args.arx_order)
        inf = check_informativity(data.r, depth)
        lines += inf.lines()
        ok = ok and inf.passed
    print("\n".join(lines))
    print("overall: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_experiment(args) -> int:
    cfg = harness.load_experiment(args.config)
    cfg = cfg.replace(runs=args.runs, seed=args.seed)
    run = harness.run_experiment1 if args.which == "exp1" else harness.run_experiment2
    rep = run(cfg, workers=args.workers)
    with open(args.out, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2)
    if args.csv:
        rep.write_samples_csv(args.csv)
    for k, s in enumerate(rep.sets):
        med = np.median(s.rmse[s.ok]) if s.ok.any() else float("nan")
        print(f"set {k + 1}: n={s.n} N={s.N} n^4/N={s.rate:.2f} median RMSE={med:.4g} "
              f"failed={len(s.failures)}/{len(s.rmse)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a network to CSV")
    s.add_argument("--network", required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--excitation", default="white:var=1")
    s.add_argument("--noiseless", action="store_true", help="drop the process noise")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("identify", help="identify a model from CSV data")
    i.add_argument("--data", required=True)
    i.add_argument("--spec", required=True)
    i.add_argument("--arx-order", type=int, required=True)
    i.add_argument("--no-weighting", action="store_true")
    i.add_argument("--max-iter", type=int, default=50)
    i.add_argument("--threshold", type=float, default=0.05)
    i.add_argument("--ts", type=float, default=None, help="override the sampling interval")
    i.add_argument("--force", action="store_true", help="skip the identifiability and informativity checks")
    i.add_argument("--report", required=True)
    i.set_defaults(func=cmd_identify)

    c = sub.add_parser("check", help="identifiability and informativity reports")
    c.add_argument("--spec", required=True)
    c.add_argument("--data")
    c.add_argument("--arx-order", type=int, default=5)
    c.add_argument("--depth", type=int, default=None)
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("experiment", help="Monte-Carlo experiments")
    e.add_argument("which", choices=["exp1", "exp2"])
    e.add_argument("--config", required=True)
    e.add_argument("--runs", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.add_argument("--csv")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"diffnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailed as exc:
        print(f"diffnet: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (IdentificationError, UnstableModelError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"diffnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
