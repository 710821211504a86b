"""Command-line entry point.

    satsplit <subcommand> [--config FILE.json] [--seed N] [--out DIR]

Exit status: 0 success, 2 configuration error, 3 experiment failure.
Logs go to stderr; results only to files under ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import ConfigError, ExperimentConfig, run

SUBCOMMANDS = {
    "noise-sweep": "Accuracy vs privacy budget scale (DP noise)",
    "dropping-sweep": "Accuracy vs satellite node dropping ratio",
    "flops-prune": "Dense vs graph+weight pruned model at a FLOPs target",
    "comm-compare": "Federated vs split learning bytes per client count",
    "split-train": "Single split-learning run with per-round metrics",
    "fl-baseline": "Federated-learning byte accounting only",
    "dp-calibrate": "Gaussian-mechanism calibration table",
}

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="satsplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file (keys as in ExperimentConfig)")
        p.add_argument("--seed", type=int, action="append",
                       help="seed to run; repeat for several (overrides config seeds)")
        p.add_argument("--out", help="output directory for CSV + manifest.json")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, experiment=args.command.replace("-", "_"),
                                    seeds=args.seed, output_dir=args.out)
    except ConfigError as exc:
        logging.error("config error: %s", exc)
        return EXIT_CONFIG
    if cfg.output_dir is None:
        logging.warning("no --out given; results are computed but not written")
    try:
        run(cfg)
    except (ConfigError, ValueError) as exc:
        logging.error("experiment %s failed: %s", cfg.experiment, exc)
        return EXIT_FAILURE if not isinstance(exc, ConfigError) else EXIT_CONFIG
    except Exception:
        logging.exception("experiment %s failed", cfg.experiment)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
