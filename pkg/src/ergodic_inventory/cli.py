"""Command-line interface for the inventory control toolkit.

This module provides the solve, verify, simulate, compare, report and
init-config commands.
"""

import argparse
import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import Callable, Dict, List, Optional

from ergodic_inventory.config import SIMULATION_POLICIES, Config, load_run_config
from ergodic_inventory.errors import InventoryControlError
from ergodic_inventory.pipeline import StudyRunner

DEFAULT_CONFIG_PATH = "ergodic-inventory.ini"

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("ergodic_inventory")


def setup_logging(config_path: Optional[str], level: Optional[int] = None) -> None:
    """Set up logging based on configuration.

    Args:
        config_path: Path to the configuration file, if any
        level: Logging level overriding the configured one
    """
    root_logger = logging.getLogger()

    config = Config(config_path)
    if not config.loaded:
        root_logger.setLevel(level or logging.INFO)
        return

    log_level = getattr(logging, config.get_logging_level(), logging.INFO)
    root_logger.setLevel(level or log_level)

    log_file = config.get_log_file()
    if log_file:
        try:
            file_handler = RotatingFileHandler(
                log_file,
                maxBytes=config.get_max_log_size(),
                backupCount=config.get_log_backup_count(),
                encoding="utf-8",
            )
            file_handler.setFormatter(
                logging.Formatter(
                    "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
                )
            )
            root_logger.addHandler(file_handler)
            logger.info(f"Logging to file: {log_file}")
        except OSError as e:
            logger.error(f"Failed to set up file logging: {e}")


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments.

    Args:
        args: Command-line arguments (optional)

    Returns:
        Parsed arguments
    """
    parser = argparse.ArgumentParser(
        description="Ergodic (s, S) inventory control: solve, verify and simulate"
    )
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    # Common arguments
    common_parser = argparse.ArgumentParser(add_help=False)
    common_parser.add_argument(
        "--config",
        "-c",
        default=None,
        help="Path to configuration file (default: built-in baseline)",
    )
    common_parser.add_argument(
        "--out", default=None, help="Output directory (overrides output.directory)"
    )
    common_parser.add_argument(
        "--seed", type=int, default=None, help="Random seed (overrides simulation.seed)"
    )
    common_parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override a configuration value (repeatable)",
    )
    common_parser.add_argument(
        "--debug", action="store_true", help="Enable debug logging"
    )

    subparsers.add_parser(
        "solve", parents=[common_parser], help="Find the optimal (s, S) policy"
    )
    subparsers.add_parser(
        "verify", parents=[common_parser], help="Certify the optimal policy"
    )
    simulate_parser = subparsers.add_parser(
        "simulate", parents=[common_parser], help="Simulate a policy"
    )
    simulate_parser.add_argument(
        "--policy",
        choices=SIMULATION_POLICIES,
        default=None,
        help="Policy to simulate (overrides simulation.policy)",
    )
    compare_parser = subparsers.add_parser(
        "compare", parents=[common_parser], help="Compare truncated policies"
    )
    compare_parser.add_argument(
        "--j",
        type=float,
        action="append",
        default=None,
        help="Truncation level (repeatable; overrides simulation.j_list)",
    )
    subparsers.add_parser(
        "report", parents=[common_parser], help="Write summary.md and the plot"
    )
    subparsers.add_parser(
        "init-config", parents=[common_parser], help="Write the default configuration"
    )

    return parser.parse_args(args)


def _runner(args: argparse.Namespace) -> StudyRunner:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"simulation.seed={args.seed}")
    if args.out:
        overrides.append(f"output.directory={args.out}")
    return StudyRunner(load_run_config(args.config, overrides))


def solve_command(args: argparse.Namespace) -> int:
    """Find and print the optimal policy."""
    optimum = _runner(args).solve()
    print(
        f"s*={optimum.s_star:.9g} S*={optimum.S_star:.9g} "
        f"alpha*={optimum.alpha_star:.12g}"
    )
    return 0


def verify_command(args: argparse.Namespace) -> int:
    """Certify the optimal policy."""
    certificate = _runner(args).verify()
    print(
        f"pass={str(certificate.passed).lower()} "
        f"s_={certificate.underline_s:.9g} z_bar={certificate.z_bar}"
    )
    return 0


def simulate_command(args: argparse.Namespace) -> int:
    """Simulate a policy and print its average cost or mean level."""
    summary = _runner(args).simulate(args.policy)
    if "average_cost" in summary:
        print(
            f"average_cost={summary['average_cost']:.9g} "
            f"ci_halfwidth={summary['ci_halfwidth']:.3g}"
        )
    else:
        print(
            f"mean={summary['mean']:.9g} ci_halfwidth={summary['ci_halfwidth']:.3g} "
            f"ks_distance={summary['ks_distance']:.4f}"
        )
    return 0


def compare_command(args: argparse.Namespace) -> int:
    """Compare a base policy with its truncations."""
    for row in _runner(args).compare(args.j):
        print(
            f"j={row['j']:g} gap={row['gap']:.6g} gap_ci={row['gap_ci']:.3g} "
            f"bound={row['bound']:.6g} within_bound={str(row['within_bound']).lower()}"
        )
    return 0


def report_command(args: argparse.Namespace) -> int:
    """Write the study report."""
    print(_runner(args).report())
    return 0


def init_config_command(args: argparse.Namespace) -> int:
    """Initialize configuration.

    Args:
        args: Command-line arguments

    Returns:
        Exit code
    """
    logger.info("Initializing default configuration")
    if Config(args.config or DEFAULT_CONFIG_PATH).create_default_config():
        return 0
    logger.error("Failed to create default configuration")
    return 1


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "solve": solve_command,
    "verify": verify_command,
    "simulate": simulate_command,
    "compare": compare_command,
    "report": report_command,
    "init-config": init_config_command,
}


def main(args: Optional[List[str]] = None) -> int:
    """Main entry point for the application.

    Args:
        args: Command-line arguments (optional)

    Returns:
        Exit code: 0 ok, 2 configuration or validation error, 3 numeric or
        simulation failure, 4 certificate failure
    """
    parsed_args = parse_args(args)

    if parsed_args.command is None:
        logger.error(f"No command given, expected one of: {', '.join(COMMANDS)}")
        return 1

    if parsed_args.command != "init-config":
        setup_logging(
            parsed_args.config, level=logging.DEBUG if parsed_args.debug else None
        )
    elif parsed_args.debug:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return COMMANDS[parsed_args.command](parsed_args)
    except InventoryControlError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
