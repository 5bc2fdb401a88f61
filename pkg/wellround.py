import os
import sys
import argparse
import logging

from dotenv import load_dotenv

sys.path.append(os.path.abspath(os.path.dirname(__file__)))
from lib import __version__
from lib.Counting import CountKind, ReferenceKind
from lib.Errors import ValidationError, WellRoundError
from lib.RunConfigBuilder import RunConfigBuilder
from lib.SeedStream import DEFAULT_SEED, resolve_threads
from lib.WellRoundConfigs import CertifyMode, Command, OutputFormat
from lib.WellRoundRunner import WellRoundRunner, write_diagnostic
from lib.utils import parse_float_list

LOG_LEVEL_ENV_VAR = 'WELLROUND_LOG_LEVEL'

logger = logging.getLogger(__name__)


class WellRoundArgumentParser(argparse.ArgumentParser):
    """Argument errors become exit-2 diagnostics instead of argparse's usage exit."""

    def error(self, message):
        raise ValidationError(message)


def _seed(text: str) -> int:
    return int(text, 0)


def _grid(text: str):
    try:
        return parse_float_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = WellRoundArgumentParser(add_help=False)
    common.add_argument('--seed', type=_seed, default=DEFAULT_SEED, help="64-bit seed (decimal or 0x hex)")
    common.add_argument('--threads', type=int, default=None,
                        help="worker threads; WELLROUND_THREADS overrides, default is the CPU count")
    common.add_argument('--out', default=None, help="report path; stdout when omitted")
    common.add_argument('--format', choices=[f.value for f in OutputFormat], default=OutputFormat.JSON.value)
    common.add_argument('--log-level', default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = WellRoundArgumentParser(prog='wellround', description="Lipschitz well-roundedness toolkit")
    commands = parser.add_subparsers(dest='command', required=True)

    for name, help_text in (('reduce', "reduce a lattice basis into the fundamental domain"),
                            ('kan', "KAN (Iwasawa) decomposition of a matrix")):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument('--in', dest='input_path', required=True)

    sub = commands.add_parser('certify', parents=[common], help="estimate the Lipschitz well-roundedness constant")
    sub.add_argument('--group')
    sub.add_argument('--set', dest='set_spec')
    sub.add_argument('--family', dest='family_path')
    sub.add_argument('--eps-grid', type=_grid, default=[0.01, 0.02, 0.05])
    sub.add_argument('--points', type=int, default=200_000)
    sub.add_argument('--perts', type=int, default=32)
    sub.add_argument('--mode', choices=[m.value for m in CertifyMode], default=CertifyMode.SAMPLED.value)
    sub.add_argument('--T-grid', dest='T_grid', type=_grid, default=None)
    sub.add_argument('--convergence', action='store_true', help="also re-run with 8, 32 and 128 perturbations")

    sub = commands.add_parser('blc-check', parents=[common], help="sampled check of a fiber family")
    sub.add_argument('--family', dest='family_path', required=True)
    sub.add_argument('--eps-grid', type=_grid, default=[0.01, 0.05])
    sub.add_argument('--points', type=int, default=20_000)
    sub.add_argument('--base-points', dest='n_base', type=int, default=16)

    sub = commands.add_parser('count', parents=[common], help="lattice point counts against Haar volume")
    sub.add_argument('--kind', choices=[k.value for k in CountKind], default=CountKind.INTEGER_POINTS.value)
    sub.add_argument('--T-grid', dest='T_grid', type=_grid, default=[1.0, 2.0, 10.0])
    sub.add_argument('--reference', choices=[r.value for r in ReferenceKind], default=ReferenceKind.ANALYTIC.value)
    sub.add_argument('--group')
    sub.add_argument('--set', dest='set_spec')
    sub.add_argument('--samples', type=int, default=200_000)

    commands.add_parser('version', parents=[common], help="print the tool version")
    return parser


def config_from_args(args: argparse.Namespace):
    command = Command(args.command)
    builder = (RunConfigBuilder()
               .with_command(command)
               .with_seed(args.seed)
               .with_threads(resolve_threads(args.threads))
               .with_output(args.out, OutputFormat(args.format)))

    if command in (Command.REDUCE, Command.KAN):
        builder.with_input(args.input_path)
    elif command == Command.CERTIFY:
        builder.with_certify(
            group=args.group, set_spec=args.set_spec, family_path=args.family_path, eps_grid=args.eps_grid,
            points=args.points, perts=args.perts, mode=CertifyMode(args.mode), T_grid=args.T_grid,
            convergence=args.convergence,
        )
    elif command == Command.BLC_CHECK:
        builder.with_blc_check(args.family_path, eps_grid=args.eps_grid, points=args.points, n_base=args.n_base)
    elif command == Command.COUNT:
        builder.with_count(
            CountKind(args.kind), args.T_grid, ReferenceKind(args.reference),
            group=args.group, set_spec=args.set_spec, samples=args.samples,
        )
    return builder.build()


def _log_level(name):
    level = logging.getLevelName(str(name).upper())
    if not isinstance(level, int):
        raise ValidationError(f"Unknown log level: {name!r}")
    return level


def main(argv=None) -> int:
    load_dotenv()
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        args = build_parser().parse_args(argv)
        level_name = args.log_level or os.getenv(LOG_LEVEL_ENV_VAR)
        if level_name:
            logging.getLogger().setLevel(_log_level(level_name))
        config = config_from_args(args)
    except WellRoundError as e:
        logger.error(f"Invalid arguments: {e}")
        write_diagnostic(e)
        return e.exit_code

    logger.debug(f"wellround {__version__}")
    return WellRoundRunner(config).run()


if __name__ == "__main__":
    sys.exit(main())
