"""Command line interface: ``dnw run|compare|verify|budget``."""

import argparse
import json
import sys

from .. import BACKEND, __version__
from ..errors import ConfigError, DNWError, NumericError, ParseError
from ..verify import verify_report
from .config import load_config
from .runner import atomic_write, cmd_budget, cmd_compare, cmd_run

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        atomic_write(path, text + "\n")
    print(text)


def _run(args):
    cfg = load_config(args.config)
    records = cmd_run(cfg, output=args.output, record_time=args.time)
    last = records[-1]
    print(f"{last.method} seed={last.seed} epochs={last.epoch} test_acc={last.test_acc:.4f} "
          f"active_edges={last.active_edges} -> {args.output or cfg.output}")
    return EXIT_OK


def _compare(args):
    cfg = load_config(args.config)
    summary = cmd_compare(cfg, args.baseline, args.seeds, output=args.output)
    accs = summary["test_acc"]
    for name in (cfg.method, args.baseline):
        s = accs[name]
        print(f"{name:>24s}: {s['mean']:.4f} +- {s['sd']:.4f}")
    print(f"paired diff: {summary['paired_diff']['mean']:+.4f}, "
          f"positive in {summary['n_positive']}/{len(summary['seeds'])} seeds")
    return EXIT_OK


def _verify(args):
    rep = verify_report(args.scenarios, seed=args.seed)
    _emit(rep, args.output)
    ok = rep["swap"]["failed"] == 0 and rep["swap_general"]["failed"] == 0 and rep["lemma1"]["failed"] == 0
    return EXIT_OK if ok else EXIT_ERROR


def _budget(args):
    try:
        with open(args.table) as fh:
            table = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON at line {e.lineno}: {e.msg}") from None
    except OSError as e:
        raise ConfigError("$", f"cannot read {args.table}: {e.strerror}") from None
    rep = cmd_budget(table)
    for row in rep["stages"]:
        print(f"{row['name']:>12s}: {row['edges']}")
    print(f"{'total':>12s}: {rep['total']}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dnw", description="Train neural graphs with learned wiring.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (default: config 'output')")
    r.add_argument("--time", action="store_true", help="record wall-clock ms per epoch")
    r.set_defaults(func=_run)

    c = sub.add_parser("compare", help="paired multi-seed comparison against a baseline")
    c.add_argument("config")
    c.add_argument("--baseline", required=True)
    c.add_argument("--seeds", type=int, default=5)
    c.add_argument("--output")
    c.set_defaults(func=_compare)

    v = sub.add_parser("verify", help="empirical checks of the swap claim and descent lemma")
    v.add_argument("--scenarios", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--output", help="also write the JSON report here")
    v.set_defaults(func=_verify)

    b = sub.add_parser("budget", help="per-stage edge budgets of a channel plan")
    b.add_argument("table")
    b.set_defaults(func=_budget)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DNWError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
