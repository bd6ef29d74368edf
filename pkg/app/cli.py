"""Command line: detect, bench-lsd, match, simulate and eval.

Exit codes: 0 success, 1 failed experiment assertions, 2 usage or input errors.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from app.core.config import settings
from app.core.database import SessionLocal, init_db
from app.core.errors import ArgumentError, LinewinError
from app.core.logging import setup_logging
from app.models.image import LineSegment2D
from app.schemas.detection import DetectorParams, MatchGates
from app.services.evaluation_service import evaluate_trajectory, read_tum
from app.services.experiment_service import load_spec, run_experiment
from app.services.image_service import load_pgm
from app.services.lsd_service import benchmark_detector, detect_lines
from app.services.matching_service import describe_all, match_lines

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2

PARAM_KEYS = {
    "s": "image_scale",
    "d": "density_threshold",
    "eta": "length_ratio",
    "layers": "n_layers",
    "ratio": "layer_ratio",
}


def parse_params(text: str) -> DetectorParams:
    """DetectorParams from 's=0.5,d=0.6,eta=0.125' style strings."""
    values: Dict[str, float] = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in PARAM_KEYS:
            raise ArgumentError(f"invalid detector setting {item!r}; keys are {', '.join(PARAM_KEYS)}")
        try:
            values[PARAM_KEYS[key.strip()]] = float(value)
        except ValueError:
            raise ArgumentError(f"detector setting {item!r} is not a number")
    if "n_layers" in values:
        values["n_layers"] = int(values["n_layers"])
    return _params(values)


def _params(values: dict) -> DetectorParams:
    try:
        return DetectorParams(**values)
    except ValueError as exc:
        raise ArgumentError(f"invalid detector settings: {exc}")


def _detector_params(args) -> DetectorParams:
    values = {}
    for flag, name in (("s", "image_scale"), ("d", "density_threshold"), ("eta", "length_ratio"),
                       ("layers", "n_layers")):
        value = getattr(args, flag)
        if value is not None:
            values[name] = value
    return _params(values)


def _read_image(path: str):
    return load_pgm(Path(path).read_bytes())


def _write_rows(path: Optional[str], header: List[str], rows: List[list]) -> None:
    handle = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            handle.close()


def _segment_row(seg: LineSegment2D) -> list:
    return [f"{v:.6f}" for v in (seg.x1, seg.y1, seg.x2, seg.y2, seg.length, seg.angle)]


def cmd_detect(args) -> int:
    segments = detect_lines(_read_image(args.image), _detector_params(args))
    _write_rows(args.csv, ["x1", "y1", "x2", "y2", "length", "angle"], [_segment_row(s) for s in segments])
    return EXIT_OK


def cmd_bench(args) -> int:
    paths = sorted(Path(args.directory).glob("*.pgm"))
    if not paths:
        raise ArgumentError(f"no .pgm images in {args.directory}")
    images = [_read_image(str(p)) for p in paths]
    report = benchmark_detector(images, parse_params(args.config_a), parse_params(args.config_b), args.reps)
    text = report.model_dump_json(indent=2)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_match(args) -> int:
    params = _detector_params(args)
    img_a, img_b = _read_image(args.image_a), _read_image(args.image_b)
    segs_a, segs_b = detect_lines(img_a, params), detect_lines(img_b, params)
    gates = MatchGates(**({"hamming_gate": args.hamming} if args.hamming is not None else {}))
    matches = match_lines(describe_all(img_a, segs_a), describe_all(img_b, segs_b), segs_a, segs_b, gates)
    _write_rows(args.csv, ["idx_a", "idx_b", "hamming", "angle_diff"],
                [[m.index_a, m.index_b, m.hamming, f"{m.angle_diff:.6f}"] for m in matches])
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = load_spec(args.spec)
    out_dir = args.out or str(Path(settings.REPORT_DIR) / Path(args.spec).stem)
    if settings.RECORD_RUNS and not args.no_record:
        init_db()
        db = SessionLocal()
        try:
            result = run_experiment(spec, out_dir, db)
        finally:
            db.close()
    else:
        result = run_experiment(spec, out_dir)
    for mode, summary in result.modes.items():
        print(f"{mode}: mean ATE {summary.mean_ate_rmse:.6g} m over {summary.runs} seeds")
    for failure in result.assertion_failures:
        print(f"assertion failed: {failure}", file=sys.stderr)
    print(f"reports written to {out_dir}")
    return EXIT_OK if result.passed else EXIT_ASSERTION


def cmd_eval(args) -> int:
    report = evaluate_trajectory(read_tum(args.est), read_tum(args.gt), args.rpe_delta, not args.no_align)
    text = report.model_dump_json(indent=2)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--s", type=float, help="image scale")
    parser.add_argument("--d", type=float, help="density threshold")
    parser.add_argument("--eta", type=float, help="length ratio")
    parser.add_argument("--layers", type=int, help="pyramid layers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linewin", description="Line feature toolkit and window estimator")
    parser.add_argument("--log-level", default=None, help="logging level (default from LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    detect = sub.add_parser("detect", help="detect line segments in a PGM image")
    detect.add_argument("image")
    _add_detector_flags(detect)
    detect.add_argument("--csv", help="write segments here instead of stdout")
    detect.set_defaults(func=cmd_detect)

    bench = sub.add_parser("bench-lsd", help="time two detector configurations on a directory of PGM images")
    bench.add_argument("directory")
    bench.add_argument("--config-a", default="s=0.5,d=0.6,eta=0.125")
    bench.add_argument("--config-b", default="s=0.8,d=0.7,eta=0")
    bench.add_argument("--reps", type=int, default=1)
    bench.add_argument("--json", help="also write the report here")
    bench.set_defaults(func=cmd_bench)

    match = sub.add_parser("match", help="detect and match lines between two PGM images")
    match.add_argument("image_a")
    match.add_argument("image_b")
    _add_detector_flags(match)
    match.add_argument("--hamming", type=int, help="Hamming distance gate")
    match.add_argument("--csv", help="write matches here instead of stdout")
    match.set_defaults(func=cmd_match)

    simulate = sub.add_parser("simulate", help="run a simulated lines-on/lines-off experiment")
    simulate.add_argument("spec")
    simulate.add_argument("--out", help="report directory (default REPORT_DIR/<spec name>)")
    simulate.add_argument("--no-record", action="store_true", help="do not store runs in the database")
    simulate.set_defaults(func=cmd_simulate)

    evaluate = sub.add_parser("eval", help="ATE and RPE of a TUM trajectory against ground truth")
    evaluate.add_argument("--est", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--rpe-delta", default="1", help="frames (1), seconds (1s) or all")
    evaluate.add_argument("--no-align", action="store_true")
    evaluate.add_argument("--json", help="also write the report here")
    evaluate.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    setup_logging(args.log_level)
    logger.debug("running %s", args.command)
    try:
        return args.func(args)
    except (LinewinError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
