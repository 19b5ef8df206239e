"""Batch command-line front end.

Subcommands: synth, assign, evaluate, stats, split, bda-check. Everything
reads and writes JSON (CSV for tabular stats and PR curves; PNG/PDF for
optional figures) and is deterministic given its flags and inputs.

Exit codes: 0 success, 2 usage error, 3 input/schema error, 4 numeric
domain error. Failures emit a one-line JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import assignment, attention, dataio, metrics
from .errors import DimensionMismatchError, DomainError, SchemaError
from .tensor import FeatureMap

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DOMAIN = 4


def _dump_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _write_text(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def _cmd_synth(args) -> int:
    scenario = dataio.synth_scenario(
        n_anchors=args.n_anchors,
        n_gts=args.n_gts,
        image_w=args.image_w,
        image_h=args.image_h,
        gt_size_range=(args.size_min, args.size_max),
        noise=args.noise,
        seed=args.seed,
    )
    _dump_json(scenario.to_json_dict(), args.output)
    return EXIT_OK


def _as_number(value, where: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where} must be a number, got {value!r}") from exc


def _config_from(scenario: dict, args) -> assignment.AssignmentConfig:
    defaults = assignment.AssignmentConfig()
    file_cfg = scenario.get("config", {})
    if not isinstance(file_cfg, dict):
        raise SchemaError("scenario 'config' must be an object")

    def pick(flag_value, file_key: str, default):
        if flag_value is not None:
            return flag_value
        if file_key in file_cfg:
            return _as_number(file_cfg[file_key], f"config.{file_key}")
        return default

    return assignment.AssignmentConfig(
        lambda_exp=pick(args.lambda_exp, "lambda", defaults.lambda_exp),
        alpha0=pick(args.alpha0, "alpha0", defaults.alpha0),
        gamma_exp=pick(args.gamma_exp, "gamma", defaults.gamma_exp),
        area_scale=pick(args.area_scale, "area_scale", defaults.area_scale),
        floor=pick(args.floor, "floor", defaults.floor),
        base=pick(args.base, "base", defaults.base),
        slope=pick(args.slope, "slope", defaults.slope),
    )


def _cmd_assign(args) -> int:
    scenario = _load_json(args.scenario)
    if not isinstance(scenario, dict):
        raise SchemaError("scenario file must hold a JSON object")
    for key in ("anchors", "regressed", "gts"):
        if not isinstance(scenario.get(key), list):
            raise SchemaError(f"scenario file needs a list under {key!r}")
    if args.progress is not None:
        progress = args.progress
    else:
        progress = _as_number(scenario.get("progress", 0.0), "progress")
    result = assignment.assign_labels(
        scenario["anchors"],
        scenario["regressed"],
        scenario["gts"],
        progress=progress,
        cfg=_config_from(scenario, args),
    )
    _dump_json(result.to_json_dict(), args.output)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    gt_index = dataio.load_coco(args.gt)
    dets = dataio.load_detections(args.dets)
    report = metrics.evaluate(dets, list(gt_index.annotations), max_dets=args.max_dets)
    _dump_json(report.to_json_dict(), args.output)
    if args.pr_csv:
        lines = ["threshold,recall,precision"]
        for t in sorted(report.pr_curves):
            curve = report.pr_curves[t]
            lines.extend(
                f"{t:.2f},{r!r},{p!r}"
                for r, p in zip(curve.recall.tolist(), curve.precision.tolist())
            )
        _write_text("\n".join(lines) + "\n", args.pr_csv)
    if args.figure:
        from . import plotting

        plotting.plot_pr_curves(report, args.figure)
    return EXIT_OK


def _cmd_stats(args) -> int:
    index = dataio.load_coco(args.gt)
    bins = dataio.DEFAULT_AR_BINS
    if args.bins:
        bins = tuple(float(v) for v in args.bins.split(","))
    stats = dataio.compute_stats(index, ar_bins=bins, small_threshold=args.small_threshold)
    if args.format == "json":
        _dump_json(stats.to_json_dict(), args.output)
    else:
        lines = ["bin_edge,count"]
        lines.extend(
            f"{edge!r},{int(count)}"
            for edge, count in zip(stats.ar_bin_edges.tolist()[:-1], stats.ar_histogram)
        )
        _write_text("\n".join(lines) + "\n", args.output)
    if args.figure:
        from . import plotting

        plotting.plot_ar_histogram(stats, args.figure)
    return EXIT_OK


def _cmd_split(args) -> int:
    index = dataio.load_coco(args.gt)
    train, test = dataio.patient_split(index, args.train_fraction, args.seed)
    dataio.save_coco(train, args.train_out)
    dataio.save_coco(test, args.test_out)
    _dump_json(
        {
            "train_images": train.n_images,
            "test_images": test.n_images,
            "train_instances": train.n_instances,
            "test_instances": test.n_instances,
        },
        args.output,
    )
    return EXIT_OK


def _cmd_bda_check(args) -> int:
    if args.fixture:
        raw = _load_json(args.fixture)
        try:
            level = FeatureMap.from_json_dict(raw["level"])
            scene = FeatureMap.from_json_dict(raw["scene"])
            params = attention.AttentionParams.from_json_dict(raw["params"])
        except KeyError as exc:
            raise SchemaError(f"fixture is missing section {exc}") from exc
    else:
        try:
            dims = [int(v) for v in args.dims.split(",")]
            channels, scene_channels, embed_width, height, width = dims
        except ValueError as exc:
            raise SchemaError(f"--dims must be five integers C,C5,Cp,H,W: {exc}") from exc
        level, scene, params = attention.random_instance(
            args.seed,
            level_channels=channels,
            scene_channels=scene_channels,
            embed_width=embed_width,
            height=height,
            width=width,
        )
    report = attention.gradient_check(level, scene, params, args.tolerance, step=args.step)
    _dump_json(report.to_json_dict(), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesiondet",
        description="Batch toolkit for detection label assignment, evaluation and dataset statistics.",
        epilog="Exit codes: 0 success, 2 usage error, 3 input/schema error, 4 numeric domain error.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic assignment scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-anchors", type=int, default=200)
    p.add_argument("--n-gts", type=int, default=10)
    p.add_argument("--image-w", type=float, default=1333.0)
    p.add_argument("--image-h", type=float, default=800.0)
    p.add_argument("--size-min", type=float, default=16.0)
    p.add_argument("--size-max", type=float, default=96.0)
    p.add_argument("--noise", type=float, default=4.0)
    p.add_argument("-o", "--output", default=None, help="output path (default stdout)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("assign", help="label anchors in a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON (anchors/regressed/gts)")
    p.add_argument("--progress", type=float, default=None, help="training progress in [0, 1]")
    p.add_argument("--lambda", dest="lambda_exp", type=float, default=None,
                   help="threshold growth exponent (default 0.55)")
    p.add_argument("--alpha0", type=float, default=None, help="late-training blend weight (default 0.6)")
    p.add_argument("--gamma", dest="gamma_exp", type=float, default=None,
                   help="disagreement penalty exponent (default 1.5)")
    p.add_argument("--area-scale", type=float, default=None, help="reference side length (default 32)")
    p.add_argument("--floor", type=float, default=None, help="threshold floor (default 0.25)")
    p.add_argument("--base", type=float, default=None, help="threshold base (default 0.2)")
    p.add_argument("--slope", type=float, default=None, help="threshold slope (default 0.15)")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_assign)

    p = sub.add_parser("evaluate", help="COCO-style AP evaluation")
    p.add_argument("--gt", required=True, help="COCO annotation JSON")
    p.add_argument("--dets", required=True, help="detection results JSON")
    p.add_argument("--max-dets", type=int, default=None,
                   help="cap detections per image and category (default uncapped)")
    p.add_argument("--pr-csv", default=None, help="also write PR curves as CSV")
    p.add_argument("--figure", default=None, help="also render the PR curves to this image file")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stats", help="dataset statistics (area-ratio distribution)")
    p.add_argument("--gt", required=True, help="COCO annotation JSON")
    p.add_argument("--bins", default=None, help="comma-separated histogram edges")
    p.add_argument("--small-threshold", type=float, default=dataio.SMALL_AR_THRESHOLD)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--figure", default=None, help="also render the histogram to this image file")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("split", help="patient-level train/test split")
    p.add_argument("--gt", required=True, help="COCO annotation JSON")
    p.add_argument("--train-fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("-o", "--output", default=None, help="summary JSON (default stdout)")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("bda-check", help="verify the gating module's analytic gradients")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixture", help="JSON fixture with level/scene/params sections")
    src.add_argument("--random", action="store_true", help="generate a seeded random instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="3,3,2,2,2", help="C,C5,Cp,H,W for --random (default 3,3,2,2,2)")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_bda_check)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, FileNotFoundError, IsADirectoryError) as exc:
        _emit_error(exc)
        return EXIT_INPUT
    except (DomainError, DimensionMismatchError) as exc:
        _emit_error(exc)
        return EXIT_DOMAIN


def _emit_error(exc: Exception) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
