"""Command line entry point for the experiment harness."""

import argparse
import logging
import sys
from dataclasses import replace

from . import harness
from .errors import (InvalidConfigError, InfeasibleProblemError,
                     InfeasibleSplitError, InfeasibleUncertaintyError,
                     OptimizationFailureError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dma-noma",
        description="Robust near-field DMA-NOMA beamforming experiments")
    parser.add_argument("--config", help="JSON experiment config file")
    parser.add_argument("--experiment", required=True,
                        choices=harness.EXPERIMENTS)
    parser.add_argument("--seed", type=int, default=None,
                        help="run a single seed instead of the config's list")
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(message)s")
    log = logging.getLogger("dma_noma")
    try:
        config = (harness.load_config(args.config) if args.config
                  else harness.ExperimentConfig())
        if args.seed is not None:
            config = replace(config, seeds=(args.seed,))
        if args.out_dir is not None:
            config = replace(config, output_dir=args.out_dir)
    except (InvalidConfigError, OSError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        path = harness.run_experiment(args.experiment, config, jobs=args.jobs)
    except InvalidConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (InfeasibleProblemError, InfeasibleSplitError,
            InfeasibleUncertaintyError) as exc:
        log.error("infeasible scenario: %s", exc)
        return EXIT_INFEASIBLE
    except OptimizationFailureError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_CONFIG
    log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
