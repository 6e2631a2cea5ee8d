# main.py
"""
main.py - Command-line entry point

    python main.py run   --config configs/stationary.json [--out DIR] [--seed-offset K] [--jobs K]
    python main.py sweep --config configs/nonstationary.json --grid sigma=0,0.0001,0.0009 [--grid tau=30,50]
    python main.py eval  --config configs/stationary.json --library results/library_0 --stream x1

Exit codes: 0 success, 1 runtime failure, 2 missing/invalid config or empty grid, 130 interrupted.
"""

import argparse
import json
import sys
from typing import List, Optional

import pandas as pd
from colorama import init, Fore

from core.config import ExperimentConfig, StreamSpec
from core.exceptions import ConfigError
from core.logger import get_logger, log_exception
from services.experiments import evaluate_library, parse_grid, run_experiment, run_sweep
from services.result_processor import display_summary

# Initialize colorama for colored output
init(autoreset=True)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INTERRUPTED = 130


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Curiosity-driven learning of slow-feature abstractions")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="Output directory (default: config output_dir)")
        p.add_argument("--seed-offset", type=int, default=0, help="Added to every trial seed")
        p.add_argument("--jobs", type=int, default=None, help="Worker processes")

    common(sub.add_parser("run", help="Run all trials of the configured scenario"))

    sweep = sub.add_parser("sweep", help="Point of no return over a parameter grid")
    common(sweep)
    sweep.add_argument("--grid", action="append", default=[],
                       help="axis=v1,v2,... with axis in epsilon_c, sigma, nu, tau (repeatable)")

    evaluate = sub.add_parser("eval", help="Run a saved library on one stream")
    evaluate.add_argument("--config", required=True, help="JSON experiment config (tau, scene)")
    evaluate.add_argument("--library", required=True, help="Directory containing manifest.json")
    evaluate.add_argument("--stream", required=True,
                          help="Stream shorthand (x1, noise, zero, blob:0) or a JSON object")
    evaluate.add_argument("--batches", type=int, default=20, help="Number of tau-sample batches")
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", default=None, help="Optional CSV path for the report")
    return parser


def _parse_stream(text: str) -> StreamSpec:
    text = text.strip()
    if text.startswith("{"):
        return StreamSpec.from_dict(json.loads(text))
    return StreamSpec.from_dict(text)


def cli_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    stats, _ = run_experiment(config, args.out, args.seed_offset, args.jobs)
    display_summary(stats, title=f"Scenario: {config.scenario}")
    return EXIT_OK if stats["failed"] < stats["trials"] else EXIT_FAILURE


def cli_sweep(args) -> int:
    config = ExperimentConfig.load(args.config)
    grid = parse_grid(args.grid) if args.grid else dict(config.sweep)
    sweep = run_sweep(config, grid, args.out, args.seed_offset, args.jobs)

    print(f"\n{Fore.CYAN}Point of no return per sweep point:")
    for row in sweep.to_dict("records"):
        eps_d = "out of grid" if pd.isna(row["epsilon_d"]) else f"{row['epsilon_d']:.4f}"
        print(f"{Fore.WHITE}  - sigma={row['sigma']:g} nu={row['nu']:g} tau={row['tau']}: {eps_d}")
    return EXIT_OK


def cli_eval(args) -> int:
    config = ExperimentConfig.load(args.config)
    report = evaluate_library(args.library, _parse_stream(args.stream), config, args.batches, args.seed)

    print(f"\n{Fore.CYAN}Library evaluation on {args.stream}:")
    for row in report.to_dict("records"):
        colour = Fore.GREEN if row["verdict"] == "known" else Fore.YELLOW
        corr = "" if pd.isna(row["corr"]) else f" | |corr| {row['corr']:.3f} (latent {row['latent']})"
        print(f"{colour}  - phi{row['abstraction']}[{row['component']}]: eta_inst {row['eta_inst_mean']:.4g} "
              f"band [{row['band_low']:.4g}, {row['band_high']:.4g}] -> {row['verdict']}{corr}")
    if args.out:
        report.to_csv(args.out, index=False)
        print(f"{Fore.GREEN}[+] Report saved to: {args.out}")
    return EXIT_OK


COMMANDS = {"run": cli_run, "sweep": cli_sweep, "eval": cli_eval}


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function"""
    args = build_parser().parse_args(argv)

    print(f"{Fore.CYAN}{'=' * 60}")
    print(f"{Fore.CYAN}Curious Abstraction Learner - {args.command}")
    print(f"{Fore.CYAN}{'=' * 60}")

    try:
        code = COMMANDS[args.command](args)
        if code == EXIT_OK:
            print(f"\n{Fore.GREEN}{'=' * 60}")
            print(f"{Fore.GREEN}Process completed successfully!")
            print(f"{Fore.GREEN}{'=' * 60}")
        return code

    except FileNotFoundError as e:
        print(f"\n{Fore.RED}[X] {e}")
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"\n{Fore.RED}[X] Invalid config: {e}")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print(f"\n{Fore.YELLOW}Process interrupted by user")
        return EXIT_INTERRUPTED
    except Exception as e:
        print(f"\n{Fore.RED}Unexpected error: {str(e)}")
        log_exception(logger, "Command failed", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
