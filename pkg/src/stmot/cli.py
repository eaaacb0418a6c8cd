"""Command-line surface.

Verbs: synth (generate a scenario bundle), track (run the tracker over a
bundle), evaluate (results vs ground truth), train (teacher-forced
training), gradcheck (finite-difference suite), graph-dump (association
graph debug export). Exit codes: 0 success, 2 parse/validation errors,
1 runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import RunConfig, load_config, save_config
from .graph import build_graph, dump_graph, prune
from .kitti_io import (KittiParseError, parse_tracking_file, record_from_box,
                       records_to_frames, write_tracking_file)
from .metrics import MetricsUndefinedError, amota_family
from .model import (bundle_transitions, calibration_dataset, create_calibrator,
                    create_gnn, create_tracker, load_model, prune_config,
                    save_model, train_calibrator, train_on_bundle)
from .sidecar import SidecarFormatError
from .synth import SynthSpec, generate, load_bundle, save_bundle
from .tracker import teacher_tracklet

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--weights", help="weight file produced by `train`")


def _resolve_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "weights", None) is not None:
        overrides["weights"] = args.weights
    return load_config(getattr(args, "config", None), overrides)


def _load_tracker(cfg: RunConfig):
    if cfg.weights:
        params, calibrator = load_model(cfg.weights, cfg)
        if not cfg.calibrate_scores:
            calibrator = None
    else:
        params = create_gnn(cfg)
        calibrator = create_calibrator(cfg) if cfg.calibrate_scores else None
    return create_tracker(cfg, params, calibrator)


def cmd_synth(args) -> int:
    spec_kwargs = {}
    if args.spec_json:
        with open(args.spec_json) as fh:
            spec_kwargs = json.load(fh)
        known = {f.name for f in dataclasses.fields(SynthSpec)}
        unknown = set(spec_kwargs) - known
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
    for name in ("num_objects", "num_frames", "feature_dim", "seed"):
        value = getattr(args, name)
        if value is not None:
            spec_kwargs[name] = value
    for flag, name in (("pos_noise", "pos_noise"), ("feature_noise", "feature_noise"),
                       ("dropout", "dropout_rate"), ("clutter", "clutter_rate")):
        value = getattr(args, flag)
        if value is not None:
            spec_kwargs[name] = value
    spec = SynthSpec(**spec_kwargs)
    bundle = generate(spec)
    save_bundle(bundle, args.out)
    print(f"wrote bundle '{bundle.sequence_id}' "
          f"({bundle.num_frames} frames, {spec.num_objects} objects) to {args.out}")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_bundle(args.bundle)
    if bundle.feature_dim != cfg.feature_dim:
        raise ValueError(f"bundle feature dim {bundle.feature_dim} != config "
                         f"feature_dim {cfg.feature_dim}")
    tracker = _load_tracker(cfg)
    outputs = tracker.run(bundle.detections)
    records = [record_from_box(o.frame_index, o.track_id, o.box) for o in outputs]
    write_tracking_file(args.out, records)
    print(f"tracked {bundle.num_frames} frames -> {len(records)} result rows in {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    results = records_to_frames(parse_tracking_file(args.results))
    gt = records_to_frames(parse_tracking_file(args.gt))
    report = amota_family(results, gt, iou_threshold=args.iou_threshold,
                          levels=args.levels)
    print(report.table())
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(report.to_json())
        print(f"report written to {args.json}")
    if args.curve_csv:
        report.write_curve_csv(args.curve_csv)
        print(f"per-recall curve written to {args.curve_csv}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_bundle(args.bundle)
    if bundle.feature_dim != cfg.feature_dim:
        raise ValueError(f"bundle feature dim {bundle.feature_dim} != config "
                         f"feature_dim {cfg.feature_dim}")
    params = create_gnn(cfg)
    steps = args.steps if args.steps is not None else cfg.train_steps
    history = train_on_bundle(bundle, cfg, params, steps=steps)
    print(f"association loss: {history[0]:.6f} -> {history[-1]:.6f} over {len(history)} steps")
    calibrator = None
    if args.train_calibration or cfg.calibrate_scores:
        calibrator = create_calibrator(cfg)
        dataset = calibration_dataset(bundle, cfg.gt_iou_threshold)
        calib_history = train_calibrator(calibrator, dataset, cfg, steps=steps)
        print(f"calibration loss: {calib_history[0]:.6f} -> {calib_history[-1]:.6f}")
    save_model(args.out, params, calibrator)
    print(f"weights written to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all
    results = run_all(seed=args.seed if args.seed is not None else 0, eps=args.eps)
    worst = max(results.values())
    for name, err in results.items():
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:<28} max rel err {err:.3e}  [{status}]")
    if worst >= args.tolerance:
        print(f"gradient check failed: {worst:.3e} >= {args.tolerance:.0e}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_graph_dump(args) -> int:
    cfg = _resolve_config(args)
    bundle = load_bundle(args.bundle)
    t = args.frame
    if not (0 <= t < bundle.num_frames):
        raise ValueError(f"frame {t} out of range [0, {bundle.num_frames})")
    if args.teacher and t > 0:
        prev = bundle.gt[t - 1]
        tracklet = teacher_tracklet(prev.boxes, prev.ids, prev.features, t - 1)
    else:
        tracklet = teacher_tracklet([], [], [], t - 1)
    graph = build_graph(bundle.detections[t], tracklet)
    if cfg.prune_enabled:
        graph = prune(graph, prune_config(cfg))
    dump_graph(graph, args.out)
    active = len(graph.active_edges())
    print(f"frame {t}: {len(graph.nodes)} nodes, {active}/{len(graph.edges)} active edges -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stmot",
        description="Spatio-temporal multi-object tracking engine (synthetic/file inputs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario bundle")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--spec-json", help="full scenario spec as JSON (flags override)")
    p.add_argument("--num-objects", dest="num_objects", type=int)
    p.add_argument("--num-frames", dest="num_frames", type=int)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--pos-noise", dest="pos_noise", type=float)
    p.add_argument("--feature-noise", dest="feature_noise", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--clutter", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="run the tracker over a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="result file (KITTI tracking format + score)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score tracking results against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.25)
    p.add_argument("--levels", type=int, default=40)
    p.add_argument("--json", help="write the full report as JSON")
    p.add_argument("--curve-csv", help="write the per-recall curve as CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="teacher-forced training on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--steps", type=int)
    p.add_argument("--train-calibration", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("graph-dump", help="export one frame's association graph as JSON")
    p.add_argument("--bundle", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", action="store_true",
                   help="use ground truth of frame-1 as the tracklet")
    _add_config_flags(p)
    p.set_defaults(func=cmd_graph_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (KittiParseError, SidecarFormatError, MetricsUndefinedError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error (invalid input): {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
