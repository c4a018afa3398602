"""Command line entry point: ``evcam run|sweep|calibrate|gen``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .energy import CalibrationError
from .harness import (ConfigError, calibrate_scenario, load_config, run_scenario, sweep_csv, threshold_sweep,
                      write_scene)
from .sensor import ProtocolError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_WARNINGS = 4

log = logging.getLogger("evcam")


class _WarningCounter(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.count = 0

    def emit(self, record):
        self.count += 1


def _setup_logging() -> _WarningCounter:
    """Verbosity from EVCAM_LOG; warnings are always counted for the exit code."""
    name = os.environ.get("EVCAM_LOG", "WARNING").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    pkg = logging.getLogger("evcam")
    for h in list(pkg.handlers):
        pkg.removeHandler(h)
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(level)
    stream.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    counter = _WarningCounter()
    pkg.addHandler(stream)
    pkg.addHandler(counter)
    pkg.setLevel(min(level, logging.WARNING))
    pkg.propagate = False
    return counter


def _thresholds(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path, help="scenario INI file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--format", choices=["csv"], default="csv")

    parser = argparse.ArgumentParser(prog="evcam", description="Event-driven smart camera simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="simulate a scenario end to end")
    run.add_argument("--framework", choices=["event", "polling", "active", "both"], default="both")
    run.add_argument("--no-baseline", action="store_true", help="skip the frame-based comparison pipeline")
    sweep = sub.add_parser("sweep", parents=[common], help="event-driven power and recall per wake threshold")
    sweep.add_argument("thresholds", type=_thresholds, help="comma-separated thresholds, e.g. 40,60,80")
    cal = sub.add_parser("calibrate", parents=[common], help="fit the processing model to a polling power")
    cal.add_argument("target", type=float, help="periodic-polling average power in uW")
    sub.add_parser("gen", parents=[common], help="render a synthetic scene to PGM frames and labels.csv")
    return parser


def _cmd_run(args, cfg) -> None:
    report = run_scenario(cfg, (args.framework,), with_baseline=not args.no_baseline)
    report.write(args.out)
    if report.overruns:
        log.warning("%d activations overran the frame period", report.overruns)
    for fw, rep in report.energy.items():
        print(f"{fw}: {rep.total:.3f} uW")
    if report.reduction is not None:
        print(f"reduction: {100 * report.reduction:+.2f} %")
    for domain, m in report.metrics.items():
        print(f"{domain}: TD={m.td} FP={m.fp} FN={m.fn} precision={m.precision:.3f} recall={m.recall:.3f}")


def _cmd_sweep(args, cfg) -> None:
    if not args.thresholds:
        raise ConfigError("threshold list is empty")
    text = sweep_csv(threshold_sweep(cfg, args.thresholds))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "sweep.csv").write_text(text)
    sys.stdout.write(text)


def _cmd_calibrate(args, cfg) -> None:
    proc, pp, ed = calibrate_scenario(cfg, args.target)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "calibration.csv").write_text(
        "c0_us,c1_us_per_event,polling_uW,event_uW\n"
        f"{proc.c0:.9f},{proc.c1:.9f},{pp.total:.6f},{ed.total:.6f}\n")
    print(f"c0={proc.c0:.3f} us c1={proc.c1:.5f} us/event polling={pp.total:.3f} uW event={ed.total:.3f} uW")


def _cmd_gen(args, cfg) -> None:
    labels = write_scene(cfg, args.out)
    print(f"{cfg.frames} frames, {len(labels)} labels written to {args.out}")


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "calibrate": _cmd_calibrate, "gen": _cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings = _setup_logging()
    try:
        cfg = load_config(args.config, seed=args.seed)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, CalibrationError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (OSError, ProtocolError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    return EXIT_WARNINGS if warnings.count else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
