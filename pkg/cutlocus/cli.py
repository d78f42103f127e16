import sys
import argparse
import logging
import argcomplete
import coloredlogs
import json

from cutlocus.config import close_stages, get_settings, load_run_config
from cutlocus.core import export_truths, list_scenarios, run, validate
from cutlocus.geometry.schema import CutLocusError, Stage, to_jsonable
from cutlocus.scenarios import SCENARIOS


#######################
# Begin CLI functions #
#######################
def _add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument(
        "-s",
        "--scenario",
        action="store",
        default=None,
        choices=list(SCENARIOS),
        help="Built-in scenario to run. A [scenario] section in the run file can define one inline instead.",
    )
    parser.add_argument("-c", "--config", action="store", default=None, help="Path to an INI run file.")
    parser.add_argument("-o", "--out", action="store", default=None, help="Output directory for the data products.")
    parser.add_argument("--rays", action="store", type=int, default=None, help="Rays per boundary piece.")
    parser.add_argument("--grid-h", action="store", type=float, default=None, help="Oracle grid spacing h.")
    parser.add_argument(
        "--stages",
        action="store",
        default=None,
        help=f"Comma separated stages; their prerequisites are added. Choose from: {', '.join(Stage.values())}",
    )
    parser.add_argument("--seed", action="store", type=int, default=None, help="Seed for every random sample.")


def build_parser(parser: argparse.ArgumentParser):
    """Build the CLI Argument parser."""

    parser.add_argument("--debug", action="store_true", default=False, help="Set logging to debug.")
    subparsers = parser.add_subparsers(dest="cl_command")

    run_parser = subparsers.add_parser("run", help="Run the pipeline on a scenario and write its data products.")
    _add_run_arguments(run_parser)

    validate_parser = subparsers.add_parser(
        "validate", help="Dry run: chart bounds, boundary data compatibility and indicatrix convexity."
    )
    _add_run_arguments(validate_parser)

    subparsers.add_parser("list-scenarios", help="List the built-in scenarios.")

    truths_parser = subparsers.add_parser("export-truths", help="Write the analytic truths of every scenario as JSON.")
    truths_parser.add_argument(
        "-o", "--out", action="store", default=None, help="Output directory. Defaults to the configured out_dir."
    )


def _run_config(args: argparse.Namespace):
    stages = None
    if args.stages:
        stages = close_stages([s.strip() for s in args.stages.split(",") if s.strip()])
        logging.debug(f"running stages {stages}")
    return load_run_config(
        args.config,
        scenario=args.scenario,
        out=args.out,
        rays=args.rays,
        grid_h=args.grid_h,
        stages=stages,
        seed=args.seed,
    )


def execute_arguments(args: argparse.Namespace) -> int:

    try:
        if args.cl_command == "run":
            config = _run_config(args)
            status = run(config)
            if status == 0:
                logging.info(f"all stages passed; products in {config.out}")
            return status
        elif args.cl_command == "validate":
            diagnostics = validate(_run_config(args))
            print(json.dumps(to_jsonable(diagnostics), indent=2, sort_keys=True))
            return 0
        elif args.cl_command == "list-scenarios":
            for line in list_scenarios():
                print(line)
            return 0
        elif args.cl_command == "export-truths":
            path = export_truths(args.out or get_settings().out_dir)
            print(path)
            return 0
    except CutLocusError as e:
        logging.error(f"{type(e).__name__}: {e}")
        return e.exit_code

    logging.error("no command given; try --help")
    return 2


def main(args=None):
    """The main CLI entry point."""

    # configure logging
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - [%(levelname)s] %(message)s",
    )
    coloredlogs.install(level="INFO", logger=logging.getLogger())

    if not args:
        args = sys.argv[1:]

    parser = argparse.ArgumentParser(description="Cut locus and singular set CLI")
    build_parser(parser)
    argcomplete.autocomplete(parser)
    args = parser.parse_args(args)

    if args.debug:
        coloredlogs.install(level="DEBUG", logger=logging.getLogger())

    return execute_arguments(args)
