"""Command-line front end: ``siqkd run|sweep|calibrate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, dump_config, parse_config, with_overrides
from .pipeline import CALIBRATION_PARAMETERS, calibrate
from .runner import emit_outputs, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("siqkd")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="scenario YAML file")
    p.add_argument("--protocol", choices=["cow", "bb84-pol", "bb84-tb"], help="override protocol")
    p.add_argument("--distance-km", type=float, help="override channel length")
    p.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
    p.add_argument("--symbols", type=int, help="Monte Carlo symbols; 0 = analytic only")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", dest="formats", help="comma list of csv,svg")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siqkd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate one scenario at a single distance")
    _common(run)

    sweep = sub.add_parser("sweep", help="evaluate a scenario over a distance sweep")
    _common(sweep)
    sweep.add_argument("--sweep", help='distances as "start:stop:step" in km')

    cal = sub.add_parser("calibrate", help="fit one parameter to a target QBER")
    _common(cal)
    cal.add_argument("--target-qber", type=float, required=True)
    cal.add_argument("--parameter", choices=CALIBRATION_PARAMETERS, default="extra_loss_db")
    cal.add_argument("--write", type=Path, help="write the calibrated config here")
    return parser


def _report(result) -> None:
    for label, rows in (("analytic", result.analytic), ("montecarlo", result.montecarlo or [])):
        for r in rows:
            print(
                f"{label:10s} {r.distance_km:8.2f} km  loss {r.loss_db:6.2f} dB  "
                f"QBER {100 * r.qber:6.3f} %  V {r.visibility:.4f}  "
                f"raw {r.raw_rate_hz:12.1f} bit/s  secret {r.secret_rate_hz:12.1f} bit/s"
            )
    if result.cutoff_km is not None:
        print(f"cutoff distance: {result.cutoff_km:.3f} km")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config)
        cfg = with_overrides(
            cfg,
            protocol=args.protocol,
            distance_km=args.distance_km,
            sweep=getattr(args, "sweep", None),
            seed=args.seed,
            symbols=args.symbols,
            out=args.out,
            formats=args.formats,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "calibrate":
            distance = cfg.scenario.channel.length_km
            new_sc, value = calibrate(cfg.scenario, args.target_qber, distance, args.parameter)
            print(f"{args.parameter} = {value!r} gives QBER {args.target_qber} at {distance} km")
            if args.write:
                from dataclasses import replace

                args.write.write_text(dump_config(replace(cfg, scenario=new_sc)))
                log.info("wrote %s", args.write)
            return EXIT_OK
        result = run_scenario(cfg, sweep=args.command == "sweep")
        _report(result)
        for path in emit_outputs(result, cfg.output.dir, cfg.output.name, cfg.output.formats):
            log.info("wrote %s", path)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
