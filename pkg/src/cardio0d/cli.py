"""Command-line entry point ``cardio0d``.

Exit codes
----------
==  =====================================================
0   success
1   ``verify``: at least one audit failed
2   command-line usage error
3   configuration error
4   integration error (non-finite or negative-volume state)
5   coupling error (bracketing, convergence or chamber failure)
6   output I/O error
==  =====================================================
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import CHAMBER_KINDS, REPORT_FORMATS, RunConfig, load_config
from .errors import ConfigError, CouplingError, IntegrationError
from .output import write_report, write_timeseries
from .run import audit_coupling, audit_run, execute

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INTEGRATION = 4
EXIT_COUPLING = 5
EXIT_IO = 6

log = logging.getLogger("cardio0d")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, type=Path, help="configuration file")
    p.add_argument("--beats", type=int, help="beat budget (periodic search cap or total beats)")
    p.add_argument("--analyze-beats", type=int, help="beats in the analysed window")
    p.add_argument("--dt", type=float, help="time step [s]")
    p.add_argument("--method", choices=("rk4", "dopri54"), help="time integrator")
    p.add_argument("--format", dest="report_format", choices=REPORT_FORMATS, help="report format")
    p.add_argument("--out", dest="output_dir", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cardio0d",
                                     description="Closed-loop 0D circulation with energy ledger.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="monolithic run: time series CSV and energy report")
    _common(p)

    p = sub.add_parser("couple", help="coupled run with an external LV chamber")
    _common(p)
    p.add_argument("--chamber", choices=CHAMBER_KINDS, help="external chamber model")
    p.add_argument("--tol", dest="coupling_tol", type=float, help="volume constraint tolerance [mL]")

    p = sub.add_parser("energy-report", help="energy report only (no time series)")
    _common(p)

    p = sub.add_parser("verify", help="run the invariant and audit suite")
    _common(p)
    p.add_argument("--skip-coupling", action="store_true", help="skip the coupled-oracle audit")
    return parser


def _config(args, **extra) -> RunConfig:
    config = load_config(args.config)
    return config.with_overrides(
        beats=args.beats, analyze_beats=args.analyze_beats, dt=args.dt, method=args.method,
        report_format=args.report_format, output_dir=args.output_dir, **extra,
    )


def _write_outputs(result, timeseries=True):
    config = result.config
    config.output_dir.mkdir(parents=True, exist_ok=True)
    if timeseries:
        write_timeseries(result.trajectory, config.params, config.timeseries_path)
        print(f"time series: {config.timeseries_path}")
    write_report(result.summary, config.report_format, config.report_path,
                 **result.report_details())
    print(f"report:      {config.report_path}")


def cmd_simulate(args):
    result = execute(_config(args, mode="monolithic"))
    _write_outputs(result)
    return EXIT_OK


def cmd_couple(args):
    result = execute(_config(args, mode="coupled", chamber=args.chamber,
                             coupling_tol=args.coupling_tol))
    _write_outputs(result)
    return EXIT_OK


def cmd_energy_report(args):
    config = _config(args)
    result = execute(config)
    if args.output_dir is not None:
        _write_outputs(result, timeseries=False)
    else:
        sys.stdout.write(write_report(result.summary, config.report_format,
                                      **result.report_details()))
    return EXIT_OK


def cmd_verify(args):
    config = _config(args, mode="monolithic")
    result = execute(config)
    audits = audit_run(result)
    if result.periodic is not None and not result.periodic.converged:
        log.warning("periodic regime not reached; work balance audit may fail")
    if not args.skip_coupling:
        beat = 0 if result.periodic is None else max(result.periodic.beat_index, 0)
        start = result.periodic.state if result.periodic is not None else config.initial_state
        audits += audit_coupling(config, start, beat)
    for a in audits:
        print(a.line())
    failed = [a for a in audits if not a.passed]
    print(f"{len(audits) - len(failed)}/{len(audits)} audits passed")
    return EXIT_AUDIT_FAILED if failed else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "energy-report": cmd_energy_report,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"integration error: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except CouplingError as exc:
        print(f"coupling error: {exc}", file=sys.stderr)
        return EXIT_COUPLING
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
