"""Command line entry point: one subcommand per experiment.

    hermitefilter <experiment> [--config FILE] [--out DIR] [--seed N] [--set KEY=VALUE ...]

Artifacts go to ``--out``; a summary and the wall-time report go to
stdout. Failures print one JSON object on stderr, e.g.
``{"error": "domain_exhausted", "message": "...", "experiment": "..."}``,
and exit with status 2 (configuration) or 1 (runtime).
"""

import argparse
import json
import logging
import sys

from . import config as cfgmod
from . import experiments
from .errors import HermiteFilterError

_HELP = {
    "scaling_demo": "truncation error vs N for several scaling factors",
    "convergence": "spectral convergence of the FKE solver against an exact solution",
    "translate_table": "truncation error vs peak offset for translated bases",
    "filter_almost_linear": "moving-window filter on the almost-linear sensor",
    "filter_cubic": "single-window filter on the cubic sensor in a channel",
    "filter_custom": "filter on a model given by sympy expressions",
    "compare_pf": "spectral filter against particle filters on one path",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hermitefilter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in cfgmod.EXPERIMENTS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", help="INI file; the [%s] section is read" % name)
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--seed", type=int, help="override the seed (unsigned 64-bit)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a parameter")
        p.add_argument("--workers", type=int, default=None, help="build window banks concurrently")
    return parser


def _overrides(pairs):
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    return out


def _load(name, args, out):
    if args.config:
        cfg = cfgmod.load(args.config, name, out)
    else:
        cfg = cfgmod.ExperimentConfig(name, {}, out)
    return cfg


def _apply(cfg, args, seed_key="seed"):
    params = _overrides(args.set)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise cfgmod.ConfigError(f"seed must be an unsigned 64-bit integer, got {args.seed}")
        if seed_key not in cfg.params:
            raise cfgmod.ConfigError(f"{cfg.experiment} takes no seed")
        params[seed_key] = str(args.seed)
    return cfg.with_overrides(**params) if params else cfg


def run(args):
    name = args.experiment
    cfg = _apply(_load(name, args, args.out), args)
    if name == "compare_pf":
        model_section = cfg["model"]
        model_name = {"cubic": "filter_cubic", "almost_linear": "filter_almost_linear", "custom": "filter_custom"}.get(
            model_section, model_section
        )
        if model_name not in ("filter_cubic", "filter_almost_linear", "filter_custom"):
            raise cfgmod.ConfigError(f"compare_pf model must be cubic, almost_linear or custom, got {model_section!r}")
        model_cfg = _load(model_name, argparse.Namespace(config=args.config), args.out)
        report = experiments.run_compare(cfg, model_cfg, workers=args.workers)
    elif name.startswith("filter_"):
        report = experiments.run_filter(cfg, workers=args.workers)
    else:
        report = experiments.RUNNERS[name](cfg)
    return report


def _print_report(report):
    print(f"experiment: {report.experiment}")
    for f in report.files:
        print(f"wrote {f}")
    for k, v in report.summary.items():
        print(f"{k}: {v}")
    for k, v in report.timings.items():
        print(f"time {k}: {v:.6g}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run(args)
    except cfgmod.ConfigError as exc:
        _fail(args, "config", exc)
        return 2
    except HermiteFilterError as exc:
        _fail(args, exc.kind, exc)
        return 1
    except (ValueError, OSError, ArithmeticError) as exc:
        _fail(args, type(exc).__name__, exc)
        return 1
    _print_report(report)
    return 0


def _fail(args, kind, exc):
    line = {"error": kind, "message": str(exc), "experiment": args.experiment}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
