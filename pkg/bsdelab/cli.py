"""
Command-line front end for the bsdelab library

    bsdelab <experiment> [--config FILE] [--seed N] [--out DIR] [--format csv|json|both]
    bsdelab setup [PROFILE]
    bsdelab profiles [--delete NAME | --set-default NAME]

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 a checked property did not hold, 1 anything else (I/O).
"""

import argparse
import sys

from . import __version__
from .common import InvariantViolation, NumericalError
from .config import KINDS, ConfigManager, apply_overrides, interactive_setup, list_profiles, load_config
from .experiments import emit, run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4


def build_parser():
    parser = argparse.ArgumentParser(prog='bsdelab',
                                     description='Numerical experiments for BSDEs with linear-growth generators')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest='command', required=True)

    for kind in KINDS:
        sub = subparsers.add_parser(kind, help=f"run the {kind} experiment")
        sub.add_argument('--config', help='JSON configuration document')
        sub.add_argument('--seed', type=int, help='override the seed')
        sub.add_argument('--out', help='output directory (default: $BSDELAB_OUTPUT_DIR or ./results)')
        sub.add_argument('--format', choices=('csv', 'json', 'both'), help='artifact format')
        sub.add_argument('--profile', help='parameter profile to start from')
        sub.add_argument('--verbose', '-v', action='store_true', help='print progress')

    setup = subparsers.add_parser('setup', help='create a parameter profile interactively')
    setup.add_argument('profile_name', nargs='?', help='profile name')
    setup.add_argument('--debug', action='store_true', help='show prompt diagnostics')

    profiles = subparsers.add_parser('profiles', help='list or manage parameter profiles')
    profiles.add_argument('--delete', metavar='NAME', help='delete a profile')
    profiles.add_argument('--set-default', metavar='NAME', help='make a profile the default')
    return parser


def _profiles(args):
    config_mgr = ConfigManager()
    if args.delete:
        if not config_mgr.delete_profile(args.delete):
            print(f"Profile '{args.delete}' not found", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"✓ Profile '{args.delete}' deleted")
        return EXIT_OK
    if args.set_default:
        if args.set_default not in config_mgr.list_profiles():
            print(f"Profile '{args.set_default}' not found", file=sys.stderr)
            return EXIT_VALIDATION
        config_mgr.set_default_profile(args.set_default)
        print(f"✓ '{args.set_default}' set as default profile")
        return EXIT_OK
    list_profiles(verbose=True)
    return EXIT_OK


def _default_profile():
    config_mgr = ConfigManager()
    name = config_mgr.get_default_profile()
    return name if name in config_mgr.list_profiles() else None


def _experiment(args):
    profile = args.profile or _default_profile()
    config = load_config(args.config, kind=args.command, profile=profile, verbose=args.verbose)
    config = apply_overrides(config, seed=args.seed, out_dir=args.out, fmt=args.format)
    table = run(config, verbose=args.verbose)
    for path in emit(table, config.format, config.out_dir, verbose=args.verbose):
        print(f"Wrote {path}")
    print(table.summary())
    for key in ('verdict', 'y0', 'min_relative_gap'):
        if key in table.metadata:
            print(f"{key}: {table.metadata[key]}")
    table.raise_for_violations()
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == 'setup':
        return EXIT_OK if interactive_setup(args.profile_name, debug=args.debug) else EXIT_ERROR
    if args.command == 'profiles':
        return _profiles(args)

    try:
        return _experiment(args)
    except InvariantViolation as e:
        print(f"Invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except NumericalError as e:
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"Invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
