"""Command-line surface binding the toolkit into reproducible pipelines.

Exit codes: 0 success, 2 validation or file-format error, 3 degenerate
geometry.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import formats, metrics, service
from .annotations import (
    DEFAULT_RATIO_THRESHOLD,
    aggregate_pair,
    consistency_stats,
    generate_normal_annotations,
    generate_ordinal_pairs,
)
from .geometry import CameraIntrinsics, DegenerateGeometryError, derive_normals
from .losses import DEFAULT_MARGIN, LossConfig
from .optimizer import OptimizeJob, optimize_depth


def _intrinsics_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--f", type=float, required=True, help="focal length in pixels")
    p.add_argument("--cx", type=float, default=None, help="principal point x (default: image center)")
    p.add_argument("--cy", type=float, default=None, help="principal point y (default: image center)")


def _intrinsics_for(args, width: int, height: int) -> CameraIntrinsics:
    pp = None
    if args.cx is not None or args.cy is not None:
        cx = args.cx if args.cx is not None else (width - 1) / 2.0
        cy = args.cy if args.cy is not None else (height - 1) / 2.0
        pp = (cx, cy)
    return CameraIntrinsics(focal_length_px=args.f, width=width, height=height, principal_point=pp)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, indent=2))


def cmd_derive_normals(args) -> int:
    z = formats.read_depth_map(args.depth)
    k = _intrinsics_for(args, z.width, z.height)
    formats.write_normal_map(args.out, derive_normals(z, k))
    return 0


def cmd_eval_depth(args) -> int:
    pred = formats.read_depth_map(args.pred)
    gt = formats.read_depth_map(args.gt)
    if args.normalize:
        mean_s, std_s = args.normalize.split(",")
        pred = metrics.normalize_to_stats(pred, float(mean_s), float(std_s))
    out = metrics.metric_suite(pred, gt).to_dict()
    if args.wkdr_pairs:
        pairs, _ = formats.load_annotations(args.wkdr_pairs)
        if not pairs:
            raise ValueError(f"no ordinal records in {args.wkdr_pairs}")
        if args.delta_grid:
            grid = [float(d) for d in args.delta_grid.split(",")]
            _, report = metrics.wkdr_sweep(pred, pairs, grid)
        else:
            report = metrics.wkdr(pred, pairs, args.delta)
        out["ordinal"] = report.to_dict()
    _emit(out)
    return 0


def cmd_eval_normals(args) -> int:
    pred = formats.read_normal_map(args.pred)
    gt = formats.read_normal_map(args.gt)
    _emit(metrics.normal_error_stats(pred, gt).to_dict())
    return 0


def cmd_gen_annotations(args) -> int:
    z = formats.read_depth_map(args.gt)
    records: list[dict] = []
    if args.normals:
        k = _intrinsics_for(args, z.width, z.height)
        scales = tuple(int(s) for s in args.scales.split(","))
        anns = generate_normal_annotations(z, k, args.normals, scales=scales, seed=args.seed)
        records.extend(formats.normal_annotation_to_record(a) for a in anns)
    if args.ordinal:
        pairs = generate_ordinal_pairs(
            z, ratio_threshold=args.ratio_threshold, count=args.ordinal, seed=args.seed
        )
        records.extend(formats.ordinal_annotation_to_record(a) for a in pairs)
    if not records:
        raise ValueError("nothing to generate: pass --normals and/or --ordinal")
    if args.out:
        formats.write_records(args.out, records)
    else:
        for rec in records:
            print(formats.dump_record(rec))
    return 0


def cmd_aggregate(args) -> int:
    responses = [r for r in formats.read_records(args.responses) if r["kind"] == "response"]
    by_task: dict[str, list[dict]] = {}
    for rec in responses:
        by_task.setdefault(rec["task_id"], []).append(rec)
    lines = []
    for tid in sorted(by_task):
        group = by_task[tid]
        if len(group) < 2:
            continue
        res = aggregate_pair(
            formats.record_to_response(group[0]),
            formats.record_to_response(group[1]),
            threshold_deg=args.threshold,
        )
        rec = {"kind": "aggregate", "task_id": tid, "status": res.status}
        if res.normal is not None:
            rec["normal"] = [float(c) for c in res.normal]
        if res.disagreement_deg is not None:
            rec["disagreement_deg"] = res.disagreement_deg
        lines.append(formats.dump_record(rec))
    body = "".join(line + "\n" for line in lines)
    if args.out:
        formats.atomic_write_bytes(args.out, body.encode("utf-8"))
    else:
        sys.stdout.write(body)
    return 0


def cmd_consistency(args) -> int:
    groups: dict[str, list] = {}
    for rec in formats.read_records(args.responses):
        if rec["kind"] == "response" and rec.get("normal") is not None:
            groups.setdefault(rec["task_id"], []).append(np.asarray(rec["normal"], float))
    groups = {t: v for t, v in groups.items() if len(v) >= 2}
    if not groups:
        raise ValueError("no task has two or more vector responses")
    reference = None
    if args.tasks:
        reference = {}
        for rec in formats.read_records(args.tasks):
            if rec["kind"] == "task" and rec.get("gold") is not None:
                reference[rec["task_id"]] = np.asarray(rec["gold"], float)
    _emit(consistency_stats(groups, reference).to_dict())
    return 0


def cmd_optimize(args) -> int:
    ordinal, normals = formats.load_annotations(args.annotations)
    k = _intrinsics_for(args, args.width, args.height)
    scales = tuple(int(s) for s in args.scales.split(","))
    cfg = LossConfig(
        normal_weight=args.normal_weight,
        margin=args.margin,
        normal_loss_kind=args.normal_loss,
        scales=scales,
    )
    job = OptimizeJob(
        width=args.width,
        height=args.height,
        intrinsics=k,
        ordinal=ordinal,
        normals=normals,
        cfg=cfg,
        max_iters=args.iters,
        step=args.step,
        stop_tol=args.stop_tol,
        seed=args.seed,
    )
    recovered, trace = optimize_depth(job)
    formats.write_depth_map(args.out, recovered)
    if args.trace:
        payload = {
            "iterations_run": trace.iterations_run,
            "best_iteration": trace.best_iteration,
            "best_loss": trace.best_loss,
            "final_grad_norm": trace.final_grad_norm,
            "losses": trace.losses,
        }
        formats.atomic_write_bytes(args.trace, json.dumps(payload).encode("utf-8"))
    return 0


def cmd_serve(args) -> int:
    cfg = service.load_config(args.config)
    if args.port is not None:
        cfg.port = args.port
    service.run_server(cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive-normals", help="depth map -> normal map")
    p.add_argument("--depth", required=True)
    _intrinsics_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_derive_normals)

    p = sub.add_parser("eval-depth", help="metric report for a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--normalize", default=None, metavar="MEAN,STD")
    p.add_argument("--wkdr-pairs", default=None)
    p.add_argument("--delta", type=float, default=DEFAULT_MARGIN)
    p.add_argument("--delta-grid", default=None, metavar="D1,D2,...")
    p.set_defaults(fn=cmd_eval_depth)

    p = sub.add_parser("eval-normals", help="angular error report for normal maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(fn=cmd_eval_normals)

    p = sub.add_parser("gen-annotations", help="sample annotations from ground truth")
    p.add_argument("--gt", required=True)
    _intrinsics_args(p)
    p.add_argument("--normals", type=int, default=0)
    p.add_argument("--ordinal", type=int, default=0)
    p.add_argument("--scales", default="1")
    p.add_argument("--ratio-threshold", type=float, default=DEFAULT_RATIO_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen_annotations)

    p = sub.add_parser("aggregate", help="two-worker aggregation over a response log")
    p.add_argument("--responses", required=True)
    p.add_argument("--threshold", type=float, default=30.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("consistency", help="worker agreement statistics")
    p.add_argument("--responses", required=True)
    p.add_argument("--tasks", default=None, help="task file supplying reference normals")
    p.set_defaults(fn=cmd_consistency)

    p = sub.add_parser("optimize", help="recover a depth field from annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    _intrinsics_args(p)
    p.add_argument("--normal-loss", choices=("angle", "depth"), default="angle")
    p.add_argument("--normal-weight", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=DEFAULT_MARGIN)
    p.add_argument("--scales", default="1")
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--stop-tol", type=float, default=1e-7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int, default=None, help="override the configured port")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DegenerateGeometryError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
