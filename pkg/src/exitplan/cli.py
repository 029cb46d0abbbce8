"""Command-line entry point: ``exitplan plan | synth | simulate | fixtures``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import fixtures
from .decision import Weights
from .exits import enumerate_exit_locations
from .graph_ir import ModelGraphError, extract_classifier_blueprint, fuse_blocks, parse_model_graph
from .hw_model import HardwareError
from .planner import InfeasibleError, PlanOptions, dump_report, replay_plan, run_search
from .profiles import DEFAULT_CORRECTION, RecordError
from .synth import MODES, GeneratorSpecError, depth_generator_spec, generate_synthetic_profiles

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3

log = logging.getLogger("exitplan")


class InputError(Exception):
    pass


def _load_json(arg: str) -> dict:
    """A path, or ``bundled:NAME`` for a shipped fixture."""
    if arg.startswith("bundled:"):
        try:
            return fixtures.load_bundled(arg.split(":", 1)[1])
        except KeyError as exc:
            raise InputError(str(exc)) from None
    try:
        with open(arg, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {arg}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{arg}: invalid JSON ({exc})") from None


def _records_source(arg: str):
    if arg.startswith("bundled:"):
        spec = _load_json(arg)
        return generate_synthetic_profiles(spec, 0)
    if not Path(arg).is_file():
        raise InputError(f"cannot read {arg}")
    return arg


def _weights(text: str) -> Weights:
    try:
        eff, acc = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers, e.g. 0.9,0.1") from None
    try:
        return Weights(eff, acc)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_plan(args) -> int:
    opts = PlanOptions(
        weights=args.weights,
        grid_min=args.grid_min,
        grid_max=args.grid_max,
        grid_points=args.grid_points,
        correction=args.correction,
        source=args.source,
        refine=args.refine,
        seed=args.seed,
        workers=args.workers,
        max_branch_fraction=args.max_branch_fraction,
        viability_floor=args.viability_floor,
        baseline_processor=args.baseline_processor,
    )
    report = run_search(_load_json(args.model), _load_json(args.hardware), _records_source(args.records), opts)
    text = dump_report(report)
    if args.summary:
        from .report import summary_table

        sys.stdout.write(summary_table(report))
        if args.out not in (None, "-"):
            _write(text, args.out)
    else:
        _write(text, args.out)
    if args.figures:
        from .report import render_figures

        for path in render_figures(report, args.figures):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        spec = _load_json(args.spec)
    else:
        g = parse_model_graph(_load_json(args.model))
        bp = extract_classifier_blueprint(g)
        spec = depth_generator_spec(
            enumerate_exit_locations(fuse_blocks(g)), bp.num_classes, final_accuracy=args.final_accuracy
        )
    if args.mode:
        spec = {**spec, "mode": args.mode}
    if args.samples is not None:
        spec = {**spec, "samples": args.samples}
    _write(generate_synthetic_profiles(spec, args.seed), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    plan = _load_json(args.plan)
    result = replay_plan(plan, _load_json(args.model), _load_json(args.hardware), _records_source(args.records))
    _write(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    for path in fixtures.write_bundled(args.directory):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exitplan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="search exit placement, mapping and thresholds")
    p.add_argument("--model", required=True, help="model graph JSON (or bundled:NAME)")
    p.add_argument("--hardware", required=True, help="platform JSON (or bundled:NAME)")
    p.add_argument("--records", required=True, help="calibration CSV (or bundled:NAME generator spec)")
    p.add_argument("--weights", type=_weights, default=Weights(), help="efficiency,accuracy (default 0.9,0.1)")
    p.add_argument("--grid-min", type=float, default=0.40)
    p.add_argument("--grid-max", type=float, default=1.00)
    p.add_argument("--grid-points", type=int, default=13)
    p.add_argument("--correction", type=float, default=DEFAULT_CORRECTION,
                   help="threshold factor applied when --source training (default 0.9)")
    p.add_argument("--source", choices=("validation", "training"), default="validation",
                   help="split the calibration records come from")
    p.add_argument("--refine", type=int, default=0, metavar="N",
                   help="re-solve the winner on an N-point grid around its thresholds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-branch-fraction", type=float, default=0.005)
    p.add_argument("--viability-floor", type=float, default=None,
                   help="minimum standalone exit accuracy (default 2/num_classes)")
    p.add_argument("--baseline-processor", default=None)
    p.add_argument("--out", default=None, help="report path (default stdout)")
    p.add_argument("--summary", action="store_true", help="print a summary table")
    p.add_argument("--figures", default=None, metavar="DIR", help="write PNG figures to DIR")
    p.set_defaults(func=cmd_plan)

    s = sub.add_parser("synth", help="generate synthetic calibration records")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="generator spec JSON (or bundled:NAME)")
    src.add_argument("--model", help="derive a depth-graded spec from a model graph")
    s.add_argument("--mode", choices=MODES, default=None)
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--final-accuracy", type=float, default=0.93)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("simulate", help="replay a saved plan on calibration records")
    r.add_argument("--plan", required=True)
    r.add_argument("--model", required=True)
    r.add_argument("--hardware", required=True)
    r.add_argument("--records", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fixtures", help="write the bundled example documents")
    f.add_argument("directory")
    f.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, ModelGraphError, HardwareError, RecordError, GeneratorSpecError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
