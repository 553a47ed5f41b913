import argparse
import sys
import traceback

from . import __version__
from .commands import COMMANDS
from .config import RunConfig
from .core import BayesImpException, ConfigError, context

# Exit codes
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def build_parser():
    description = ("Two-stage causal data fusion with Bayesian interventional mean "
                   "processes: generate data, compare uncertainty estimates, run "
                   "causal Bayesian optimization and calibration studies.")
    kwargs = dict(prog="bayesimp", description=description, add_help=False)
    kwargs["allow_abbrev"] = False
    parser = argparse.ArgumentParser(**kwargs)
    parser.add_argument("command",
                        nargs="?",
                        choices=list(COMMANDS),
                        help="The command to run.")
    parser.add_argument("--config", "-c",
                        metavar="PATH",
                        help="The INI run configuration.")
    parser.add_argument("--out", "-o",
                        metavar="DIR",
                        help=("The output directory. Defaults to ``directory`` in the "
                              "``[out]`` section of the configuration."))
    parser.add_argument("--seed",
                        metavar="U64",
                        type=int,
                        help="Root seed. Overrides ``seed`` in the ``[data]`` section.")
    parser.add_argument("--threads", "-j",
                        metavar="N",
                        type=int,
                        default=1,
                        help=("The number of threads used for seed replicates. Set to "
                              "-1 to use the number of cpus on this machine. "
                              "Default is 1."))
    parser.add_argument("--verbose", "-v",
                        action="store_true",
                        help="Report progress")
    parser.add_argument("--help", "-h", action='help',
                        help="Show this help message then exit")
    parser.add_argument("--version",
                        action='store_true',
                        help="Show version then exit")
    return parser


# Parser at top level to allow sphinxcontrib.autoprogram to work
PARSER = build_parser()


def fail(msg, code=1):
    print(msg, file=sys.stderr)
    sys.exit(code)


def main(args=None, commands=None):
    args = PARSER.parse_args(args=args)
    commands = COMMANDS if commands is None else commands

    if args.version:
        print('bayesimp %s' % __version__)
        sys.exit(0)

    if args.command is None:
        fail("bayesimp: a command is required (%s)" % ', '.join(COMMANDS), EXIT_CONFIG)
    if args.config is None:
        fail("bayesimp: --config is required", EXIT_CONFIG)
    if args.threads != -1 and args.threads < 1:
        fail("bayesimp: --threads must be >= 1, or -1 for all cores", EXIT_CONFIG)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        fail("bayesimp: --seed must be an unsigned 64-bit integer", EXIT_CONFIG)

    try:
        with context.set_cli():
            config = RunConfig.from_file(args.config)
            commands[args.command](config,
                                   out=args.out,
                                   seed=args.seed,
                                   n_threads=args.threads,
                                   verbose=args.verbose)
    except ConfigError as e:
        fail("ConfigError: %s" % e, EXIT_CONFIG)
    except BayesImpException as e:
        fail("%s: %s" % (type(e).__name__, e), EXIT_NUMERIC)
    except (ArithmeticError, ValueError) as e:
        fail("NumericalError: %s" % e, EXIT_NUMERIC)
    except OSError as e:
        fail("IOError: %s" % e, EXIT_IO)
    except KeyboardInterrupt:
        fail("Interrupted")
    except Exception:
        fail(traceback.format_exc())
    sys.exit(0)


if __name__ == '__main__':
    main()
