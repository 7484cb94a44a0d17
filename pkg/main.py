"""
Command-line entry for the OU superprocess lab.

Subcommands:
- simulate: one particle (or backbone) run, written as a snapshot / event log
- moments: one moment value with its quadrature error estimate
- variance: the regime's limit variance of a test function
- clt, mass-law, backbone, bridge: replicated experiment suites
- validate: analytic property checks plus reference suite runs

Exit codes: 0 success, 1 verdict failure or run error, 2 usage/config error.
"""

from dotenv import load_dotenv
import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional
# Load environment variables from project root .env
dotenv_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), ".env")
load_dotenv(dotenv_path=dotenv_path)

import numpy as np

from lab.coordinator import get_coordinator
from lab.tools.backbone_sim import poisson_initial, simulate_backbone, write_event_log
from lab.tools.limit_variances import limit_variance, variance_record
from lab.tools.moment_engine import Mechanism, MechanismKind, get_engine
from lab.tools.particle_sim import simulate_superprocess, write_snapshot
from lab.tools.streams import StreamPurpose, replica_stream
from utils.config import build_config
from utils.contracts import ExperimentConfig, MomentKind, VarianceMethod
from utils.errors import ConfigError, LabError
from utils.logger import get_logger
from utils.state import compact_report

# Set up logger
logger = get_logger(__name__)

# Enable colorized CLI output if colorama is available
try:
    from colorama import Fore, init
    init(autoreset=True)
    COLORS_AVAILABLE = True
except ImportError:
    # Fallback: No color support
    class MockColors:
        RED = GREEN = YELLOW = BLUE = MAGENTA = CYAN = WHITE = RESET = ""
    Fore = MockColors()
    COLORS_AVAILABLE = False

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

SUITE_COMMANDS = ("clt", "mass-law", "backbone", "bridge", "validate")

# flag dest -> config key; only flags the user actually gave become overrides
OVERRIDE_FLAGS = (
    "seed", "workers", "replicas", "horizon", "resolution", "f", "nu", "sigma", "mu", "alpha", "beta",
    "dim", "critical", "regime", "output_dir", "laplace_time", "thetas", "survival_proxy", "mechanism",
    "v_draws", "population_cap",
)


class UsageError(Exception):
    """argparse rejected the command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key-value config file (dotenv grammar)")
    parser.add_argument("--quick", action="store_true", help="desk-scale profile")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--horizon", type=float)
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--laplace-time", dest="laplace_time", type=float)
    parser.add_argument("--thetas", help="comma-separated Laplace arguments")
    parser.add_argument("--f", help='test function, e.g. "x^2 - 0.5"')
    parser.add_argument("--nu", help='initial measure, e.g. "1@0" or "0.5@0;0.5@1"')
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--mu", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--dim", type=int)
    parser.add_argument("--critical", action="store_true", default=None, help="set alpha = 2 mu")
    parser.add_argument("--regime", choices=["slow", "critical", "fast"])
    parser.add_argument("--survival-proxy", dest="survival_proxy", choices=["alive", "half_median"])
    parser.add_argument("--mechanism", choices=["super", "sub"])
    parser.add_argument("--v-draws", dest="v_draws", type=int)
    parser.add_argument("--population-cap", dest="population_cap", type=int)
    parser.add_argument("--output-dir", dest="output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="main.py", description="OU superprocess lab")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    simulate = sub.add_parser("simulate", help="one particle or backbone run")
    _add_common(simulate)
    simulate.add_argument("--backbone", action="store_true", help="simulate the backbone instead")
    simulate.add_argument("--replica", type=int, default=0, help="replica id selecting the random stream")

    moments = sub.add_parser("moments", help="u_f^k, u*_f^k or V_f^k at (x, t)")
    _add_common(moments)
    moments.add_argument("--k", type=int, required=True)
    moments.add_argument("--x", required=True, help="comma-separated coordinates")
    moments.add_argument("--t", type=float, required=True)
    moments.add_argument("--kind", choices=[k.value for k in MomentKind], default=MomentKind.U_SUPER.value)

    variance = sub.add_parser("variance", help="limit variance of f in the configured regime")
    _add_common(variance)
    variance.add_argument("--method", choices=[m.value for m in VarianceMethod])

    for name in SUITE_COMMANDS:
        _add_common(sub.add_parser(name, help=f"run the {name} suite"))
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, key) for key in OVERRIDE_FLAGS if getattr(args, key, None) is not None}


def _parse_point(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--x: expected comma-separated numbers, got {text!r}") from e


def _print_json(data: Dict[str, Any]) -> None:
    print(json.dumps(data, indent=2))


def cmd_moments(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    engine = get_engine(cfg.params)
    x = _parse_point(args.x)
    kind = MomentKind(args.kind)
    if kind == MomentKind.V_BACKBONE:
        result = engine.backbone_moment(cfg.f, x, args.t, args.k)
    else:
        mech = MechanismKind.SUPER if kind == MomentKind.U_SUPER else MechanismKind.SUB
        result = engine.u_moment(cfg.f, x, args.t, args.k, mech)
    _print_json(result.record())
    return EXIT_OK


def cmd_variance(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    method = VarianceMethod(args.method) if args.method else None
    _print_json(variance_record(limit_variance(cfg.f, cfg.params, method)))
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    run_dir = os.path.join(cfg.output_dir, "simulate")
    rng = replica_stream(cfg.seed, args.replica)
    if args.backbone:
        gamma = poisson_initial(cfg.nu, replica_stream(cfg.seed, args.replica, StreamPurpose.INITIAL), cfg.params)
        state = simulate_backbone(gamma, cfg.horizon, rng, cfg.params, population_cap=cfg.population_cap)
        path = write_event_log(state, os.path.join(run_dir, "backbone_events.tsv"))
        summary = {"size": state.size, "events": len(state.events), "t": state.current_time}
    else:
        mech = Mechanism(MechanismKind(cfg.mechanism), cfg.params)
        system = simulate_superprocess(cfg.nu, cfg.horizon, cfg.resolution, mech, rng, population_cap=cfg.population_cap)
        path = write_snapshot(system, os.path.join(run_dir, "snapshot.csv"), seed=cfg.seed, stream=args.replica)
        summary = {"count": system.count, "mass": system.total_mass, "survived": system.survived, "t": system.current_time}
        if system.survived:
            summary["mean_position"] = np.mean(system.positions, axis=0).tolist()
    summary["path"] = str(path)
    _print_json(summary)
    return EXIT_OK


def cmd_suite(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    print(f"{Fore.CYAN}Running {args.command} (seed {cfg.seed}, {cfg.replicas} replicas, {cfg.workers} worker(s))")
    report = get_coordinator().run_suite(args.command, cfg)
    compact = compact_report(report)
    for name, passed in compact["verdicts"].items():
        colour = Fore.GREEN if passed else Fore.RED
        print(f"{colour}  {'PASS' if passed else 'FAIL'}  {Fore.WHITE}{name}")
    for error in compact["errors"]:
        print(f"{Fore.YELLOW}  ! {error}")
    _print_json(compact["headline"])
    if report.passed and not report.errors:
        print(f"{Fore.GREEN}{args.command}: all verdicts passed")
        return EXIT_OK
    print(f"{Fore.RED}{args.command}: verdict failure")
    return EXIT_FAILED


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "variance": cmd_variance,
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, dispatch, and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"{Fore.RED}usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE

    try:
        cfg = build_config(args.config, _overrides(args), quick=args.quick)
    except ConfigError as e:
        logger.error(str(e))
        print(f"{Fore.RED}config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    handler = COMMANDS.get(args.command, cmd_suite)
    try:
        return handler(cfg, args)
    except ConfigError as e:
        logger.error(str(e))
        print(f"{Fore.RED}config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        logger.error(str(e))
        print(f"{Fore.RED}invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE
    except LabError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"{Fore.RED}{args.command} failed: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(cli_main())
