"""Command-line pipeline driver.

Subcommands: convert, synth, split, train, eval, fuse, gradcheck.
Machine-readable output goes to stdout, logs to stderr. Exit codes:
0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import data as datamod
from . import events as eventsmod
from . import frames as framesmod
from . import pose_net
from . import synth as synthmod
from . import training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class DataError(RuntimeError):
    pass


def _log(msg: str):
    print(msg, file=sys.stderr)


def _read_events(path: str) -> eventsmod.EventStream:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] == eventsmod.SPKE_MAGIC:
        return eventsmod.read_binary(raw)
    return eventsmod.parse_csv(raw)


def _read_frames(path: str):
    with open(path, "rb") as fh:
        frames, meta = framesmod.read_frame_archive(fh.read())
    x, poses, t = framesmod.frames_to_arrays(frames)
    return x, poses, t, meta


def _parse_kv_file(path: str) -> dict[str, str]:
    kv = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    return kv


def cmd_convert(args) -> int:
    stream = eventsmod.validate_sort(_read_events(args.events))
    with open(args.poses, "rb") as fh:
        pose_t, poses = eventsmod.read_pose_track(fh.read())
    labeled, dropped = framesmod.build_labeled_frames(stream, pose_t, poses,
                                                      args.window_ms)
    geo = stream.geometry
    payload = framesmod.write_frame_archive(labeled, geo.width, geo.height,
                                            int(args.window_ms))
    with open(args.out, "wb") as fh:
        fh.write(payload)
    _log(f"convert: {len(stream)} events -> {len(labeled)} frames "
         f"({dropped} dropped), window {args.window_ms} ms")
    print(f"frames={len(labeled)}")
    return EXIT_OK


def _scene_from_kv(kv: dict[str, str]) -> synthmod.SceneConfig:
    def vec(key: str) -> tuple[float, float, float]:
        parts = [float(v) for v in kv[key].split(",")]
        if len(parts) != 3:
            raise DataError(f"{key} must have 3 comma-separated values")
        return tuple(parts)

    try:
        geometry = eventsmod.SensorGeometry(int(kv.get("width", 640)),
                                            int(kv.get("height", 480)))
        return synthmod.SceneConfig(
            start_pose=framesmod.Pose6D(vec("start_translation"), vec("start_rotation")),
            end_pose=framesmod.Pose6D(vec("end_translation"), vec("end_rotation")),
            duration_s=float(kv["duration_s"]),
            geometry=geometry,
            events_per_edge_pixel=float(kv.get("events_per_edge_pixel", 0.6)),
            focal_px=float(kv["focal_px"]) if "focal_px" in kv else None,
            seed=int(kv.get("seed", 0)),
        )
    except KeyError as e:
        raise DataError(f"scene config missing key {e.args[0]!r}") from None
    except ValueError as e:
        raise DataError(f"scene config: {e}") from None


def cmd_synth(args) -> int:
    scene = _scene_from_kv(_parse_kv_file(args.config))
    stream, (pose_t, poses) = synthmod.synth_generate(scene)
    with open(args.out_events, "wb") as fh:
        fh.write(eventsmod.write_binary(stream))
    with open(args.out_poses, "wb") as fh:
        fh.write(eventsmod.write_pose_track(pose_t, poses))
    _log(f"synth: {len(stream)} events over {scene.duration_s} s, "
         f"{len(pose_t)} poses")
    print(f"events={len(stream)}")
    print(f"poses={len(pose_t)}")
    return EXIT_OK


def cmd_split(args) -> int:
    _, _, _, meta = _read_frames(args.frames)
    plans = datamod.kfold_plans(meta["frame_count"], k=args.k, repeats=args.repeats,
                                base_seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(datamod.write_fold_plans(plans))
    _log(f"split: {meta['frame_count']} frames -> {len(plans)} fold plans "
         f"(k={args.k}, repeats={args.repeats})")
    print(f"plans={len(plans)}")
    return EXIT_OK


def cmd_train(args) -> int:
    frames, labels, _, _ = _read_frames(args.frames)
    net = pose_net.config_from_variant(args.variant)
    if args.width_scale != 1.0:
        net = pose_net.config_from_variant(args.variant,
                                           **pose_net.scaled_plan(args.width_scale))
    if args.plan:
        with open(args.plan, encoding="utf-8") as fh:
            plans = datamod.read_fold_plans(fh.read())
        if not 0 <= args.fold < len(plans):
            raise DataError(f"fold {args.fold} outside 0..{len(plans) - 1}")
        plan = plans[args.fold]
        train_idx, test_idx = plan.train_frames, plan.test_frames
    else:
        train_idx, test_idx = datamod.split_sequences(len(frames), 0.8,
                                                      seed=args.seed)
    cfg = training.TrainConfig(
        net=net, batch_size=args.batch_size, epochs=args.epochs,
        base_lr=args.lr, seed=args.seed,
        augment=datamod.AugmentConfig() if args.augment else None,
        eval_every=args.eval_every,
    )

    def sink(entry):
        _log(f"epoch {entry.epoch}: lr={entry.lr:.3g} "
             f"loss={entry.train_loss:.4f} Et={entry.test_et:.4f} "
             f"Er={entry.test_er:.4f}")

    model, metrics, logs = training.train_run(frames, labels, train_idx, test_idx,
                                              cfg, log_sink=sink)
    pose_net.save_model(model, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write("epoch,lr,train_loss,Et,Er\n")
            for entry in logs:
                fh.write(entry.csv_row() + "\n")
    print(f"Et={metrics.mean_position_error_m!r}")
    print(f"Er={metrics.mean_rotation_error_deg!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    frames, labels, _, _ = _read_frames(args.frames)
    model = pose_net.load_model(args.ckpt)
    if args.fused and not model.fused:
        model.eval()
        model = pose_net.fuse_bn(model)
    metrics = training.evaluate(model, frames, labels)
    print("metric,value")
    print(f"Et,{metrics.mean_position_error_m!r}")
    print(f"Er,{metrics.mean_rotation_error_deg!r}")
    _log(f"eval: {len(frames)} frames, fused={model.fused}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    model = pose_net.load_model(args.ckpt)
    model.eval()
    fused = pose_net.fuse_bn(model)
    pose_net.save_model(fused, args.out)
    _log(f"fuse: wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .nn import gradcheck
    results = gradcheck.run_suite(n_cases=args.cases, seed=args.seed)
    failed = False
    for r in results:
        print(r.line())
        failed = failed or not r.ok
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="spikepose",
                     description="event streams -> binary frames -> 6D pose models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="events + poses -> frame archive")
    p.add_argument("--events", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-ms", type=float, default=100.0)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic labeled stream")
    p.add_argument("--config", required=True, help="flat key=value scene file")
    p.add_argument("--out-events", required=True)
    p.add_argument("--out-poses", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("split", help="K-fold plans for a frame archive")
    p.add_argument("--frames", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train one variant on a frame archive")
    p.add_argument("--frames", required=True)
    p.add_argument("--plan", help="fold plan CSV (default: fresh 80/20 split)")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--variant", required=True,
                   help="{relu|plif}-{bn|nobn}-{step|cos}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--width-scale", type=float, default=1.0,
                   help="shrink channel plan for desk-scale runs")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--log", help="epoch CSV log path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics for a checkpoint on an archive")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--fused", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("fuse", help="fold BN into convolutions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (eventsmod.EventFormatError, framesmod.FrameFormatError,
            datamod.DatasetError, synthmod.SynthError, DataError,
            pose_net.ModelStateError, FileNotFoundError) as e:
        _log(f"data error: {e}")
        return EXIT_DATA
    except (training.TrainingDiverged,) as e:
        _log(f"numerical failure: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
