"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: cli.py
Description: Command-line entry point for aac-lab
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Parse arguments, configure logging once, dispatch a verb and map
    failures to exit codes.

Verbs:
    1. train: run AAC or a baseline and write a run directory
    2. eval-sweep: normal and misleading frequency sweeps of a finished run
    3. emit-plots: tidy return / hyperparameter CSVs over run directories
    4. inspect-checkpoint: header, layer sizes and parameter counts

Exit Codes:
    0 success, 2 usage or configuration error, 3 numeric failure,
    4 missing or corrupt run directory / checkpoint / config file

Usage:
    aac-lab train --mode aac --env pendulum --seed 1
    aac-lab train --mode sac --env pendulum --steps 50000
    aac-lab train --config run.toml --set evolution.population_size=6
    aac-lab eval-sweep runs/aac-pendulum-seed1-<hash> --k 1 2 3 4 5
=============================================================================
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .harness import emit_plot_data, inspect_checkpoint, load_run_config, run_training, sweep_run
from .models import ENV_IDS, MODES, RunResult
from .utils import AACLabError, InvalidInputError, NumericError, RunInputError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_INPUT = 4


class LabCommands:
    """
    Executes CLI verbs and wraps their outcome in a RunResult.

    Errors are translated into failed results carrying the exit code that
    main() returns.
    """

    def handle(self, verb: str, args: argparse.Namespace) -> Tuple[RunResult, int]:
        """
        Run one verb.

        Args:
            verb: Verb name
            args: Parsed arguments

        Returns:
            (result, exit code)
        """
        try:
            if verb == "train":
                result = self.train(args)
            elif verb == "eval-sweep":
                result = self.eval_sweep(args)
            elif verb == "emit-plots":
                result = self.emit_plots(args)
            elif verb == "inspect-checkpoint":
                result = self.inspect(args)
            else:
                return RunResult(success=False, verb=verb, error=f"unknown verb {verb}"), EXIT_USAGE
            return result, EXIT_OK

        except NumericError as exc:
            logger.error("Numeric failure: %s", exc)
            return RunResult(success=False, verb=verb, error=str(exc)), EXIT_NUMERIC
        except RunInputError as exc:
            logger.error("Input error: %s", exc)
            return RunResult(success=False, verb=verb, error=str(exc)), EXIT_INPUT
        except (InvalidInputError, AACLabError) as exc:
            logger.error("Usage error: %s", exc)
            return RunResult(success=False, verb=verb, error=str(exc)), EXIT_USAGE

    def train(self, args: argparse.Namespace) -> RunResult:
        values: Dict[str, Any] = {
            "mode": args.mode,
            "env_id": args.env,
            "seed": args.seed,
            "total_env_steps": args.steps,
            "num_threads": args.threads,
            "output_dir": args.output,
        }
        config = load_run_config(args.config, args.set or (), values)
        return run_training(config, args.run_dir)

    def eval_sweep(self, args: argparse.Namespace) -> RunResult:
        table = sweep_run(args.run_dir, args.k, args.episodes, args.seed, args.reported_k)
        summary = table.groupby("mode")["mean_return"].mean().to_dict()
        return RunResult(
            verb="eval-sweep",
            run_dir=str(args.run_dir),
            message="mean-over-k return: " + ", ".join(f"{m} {v:.2f}" for m, v in summary.items()),
            data=table.to_dict(orient="records"),
        )

    def emit_plots(self, args: argparse.Namespace) -> RunResult:
        paths = emit_plot_data(args.run_dirs, args.output)
        return RunResult(
            verb="emit-plots",
            run_dir=str(args.output),
            message=f"wrote {len(paths)} files",
            data={name: str(path) for name, path in paths.items()},
        )

    def inspect(self, args: argparse.Namespace) -> RunResult:
        info = inspect_checkpoint(args.path)
        return RunResult(
            verb="inspect-checkpoint",
            message=f"{info['total_parameters']} parameters in {len(info['networks'])} networks",
            data=info,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aac-lab", description="Automatic Actor-Critic lab")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="verb", required=True)

    train = sub.add_parser("train", help="train AAC or a baseline")
    train.add_argument("--config", help="TOML config file with dotted sections")
    train.add_argument("--mode", choices=MODES)
    train.add_argument("--env", choices=ENV_IDS)
    train.add_argument("--seed", type=int)
    train.add_argument("--steps", type=int, help="total environment steps")
    train.add_argument("--threads", type=int)
    train.add_argument("--output", help="parent directory for run directories")
    train.add_argument("--run-dir", help="explicit run directory")
    train.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dotted config key (repeatable)")

    sweep = sub.add_parser("eval-sweep", help="frequency sweep of a finished run")
    sweep.add_argument("run_dir")
    sweep.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    sweep.add_argument("--episodes", type=int, default=10)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--reported-k", type=int, default=1,
                       help="k shown in the observation in misleading mode")

    plots = sub.add_parser("emit-plots", help="tidy plot data from run directories")
    plots.add_argument("run_dirs", nargs="*")
    plots.add_argument("--output", default="plots")

    inspect = sub.add_parser("inspect-checkpoint", help="describe a checkpoint file")
    inspect.add_argument("path")
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse `argv`, run the verb, print the JSON response and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    result, code = LabCommands().handle(args.verb, args)
    print(json.dumps(result.to_response(), indent=2, default=str))
    return code


def main(argv: Optional[List[str]] = None) -> None:
    """Console-script entry point."""
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
