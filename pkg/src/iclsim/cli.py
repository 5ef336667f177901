"""Command line entry point: ``iclsim run|compare|oracle``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config, parse_seed_list, validate
from .errors import ConfigError, IclError, SeedMismatch
from .harness import compare_runs, load_summary, run_batch

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _parser():
    ap = argparse.ArgumentParser(prog="iclsim", description="Incentivized collaborative learning simulations.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, need_config=True):
        p.add_argument("--config", required=need_config, help="TOML experiment file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seeds", help="comma-separated seeds (overrides seeds)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes, one seed each")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="run a batch of seeds"))
    common(sub.add_parser("oracle", help="run the brute-force oracle suite"), need_config=False)
    cmp_ = sub.add_parser("compare", help="paired comparison of two summary files")
    cmp_.add_argument("summary_a")
    cmp_.add_argument("summary_b")
    cmp_.add_argument("--metric")
    cmp_.add_argument("--quiet", action="store_true")
    return ap


def _load(args, force_oracle=False):
    if args.config:
        cfg = load_config(args.config)
        if force_oracle and cfg.backend != "oracle":
            raise ConfigError([("backend", "the oracle command needs backend = \"oracle\"")])
    else:
        cfg = validate({"backend": "oracle", "seeds": [0]})
    if args.seeds:
        cfg.seeds = parse_seed_list(args.seeds)
    return cfg


def main(argv=None):
    args = _parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "compare":
            rep = compare_runs(load_summary(args.summary_a), load_summary(args.summary_b), args.metric)
            say(json.dumps(rep, sort_keys=True, indent=2))
            return EXIT_OK
        cfg = _load(args, force_oracle=args.command == "oracle")
        if args.jobs < 1:
            raise ConfigError([("--jobs", "must be >= 1")])
        summary = run_batch(cfg, out_dir=args.out, jobs=args.jobs)
    except ConfigError as exc:
        for path, msg in exc.issues:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except SeedMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IclError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in summary.files:
        say(path)
    for name, ok in sorted(summary.checks.items()):
        say(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if summary.passed else EXIT_CHECK
