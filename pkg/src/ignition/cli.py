"""Command-line entry point wiring all modules together.

Subcommands: synth, stats, train, evaluate, drive, render, serve. Every run
writes a ``resolved_config.json`` capturing the full effective configuration.
All randomness flows from one ``--seed``; per-phase seeds are derived by
hashing the seed with a phase label so each phase is independently
reproducible.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from ignition import dataset as D
from ignition import track as T
from ignition import trainer as TR
from ignition.autodiff import CheckpointError
from ignition.bridge import BridgeError, VizBridge, train_progress_message
from ignition.controller import ControllerError, drive as run_drive
from ignition.dynamics import CarParams, CarState, reset_to_track
from ignition.model import DrivingModel, ModelConfig
from ignition.oracle import OracleError, OracleParams
from ignition.render import CameraParams, RenderError, render, write_pgm

_RUNTIME_ERRORS = (
    D.DatasetError, T.TrackError, TR.TrainerError, ControllerError,
    OracleError, RenderError, BridgeError, CheckpointError,
    ValueError, OSError, KeyError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def derive_seed(seed: int, label: str) -> int:
    """Phase seed = hash of (label, root seed); stable across runs."""
    digest = hashlib.sha256(f"{label}:{seed}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except Exception:
        raise ValueError(f"size must look like 64x36, got {text!r}") from None


def _load_track(spec: str) -> T.TrackSpec:
    if spec in T.BUNDLED_TRACKS:
        return T.load_bundled(spec)
    return T.load_track(spec)


def _write_resolved_config(out_dir, command: str, args: argparse.Namespace,
                           extra: dict | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = {"command": command,
           **{k: v for k, v in vars(args).items() if k != "func"}}
    if extra:
        cfg.update(extra)
    with open(out_dir / "resolved_config.json", "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=1, sort_keys=True, default=str)
        f.write("\n")


def _add_threads_flag(p: _Parser) -> None:
    default = int(os.environ.get("IGNITION_THREADS", "1"))
    p.add_argument("--threads", type=int, default=default,
                   help="worker thread budget (default: $IGNITION_THREADS or 1)")


# -- subcommands ----------------------------------------------------------


def _cmd_synth(args) -> int:
    track = _load_track(args.track)
    car = CarParams.from_json(args.car) if args.car else CarParams()
    oracle = OracleParams.from_json(args.oracle) if args.oracle else OracleParams()
    manifest = D.synthesize(
        track, car, oracle, duration_s=args.duration, size=_parse_size(args.size),
        seed=derive_seed(args.seed, "synth"), out_dir=args.out,
        split_mode=args.split)
    _write_resolved_config(args.out, "synth", args,
                           {"derived_seed": derive_seed(args.seed, "synth")})
    print(f"wrote {manifest.record_count} records to {args.out} "
          f"(splits: {manifest.split_counts})")
    return 0


def _bar(count: int, peak: int, width: int = 40) -> str:
    return "#" * int(round(width * count / max(peak, 1)))


def _cmd_stats(args) -> int:
    ds = D.Dataset(args.data)
    stats = D.label_stats(ds)
    with open(Path(args.data) / "stats.json", "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=1, sort_keys=True)
        f.write("\n")
    _write_resolved_config(args.data, "stats", args)
    print(f"records: {len(ds)}   track: {ds.manifest.track_name}")
    print(f"steering mean {stats['steering_mean']:+.2f} deg, "
          f"std {stats['steering_std']:.2f} deg")
    peak = max(stats["steering_hist"])
    for i, count in enumerate(stats["steering_hist"]):
        lo = -180 + 10 * i
        if count:
            print(f"  [{lo:+4d},{lo + 10:+4d}) {_bar(count, peak)} {count}")
    print(f"extreme pedal fraction: {stats['extreme_pedal_fraction']:.3f}")
    print(f"throttle*brake co-occurrence: {stats['throttle_brake_cooccurrence']:.4f}")
    print(f"class priors: {stats['class_priors']}")
    return 0


def _load_model_config(args, dataset: D.Dataset) -> ModelConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            return ModelConfig.from_dict(json.load(f))
    m = dataset.manifest
    return ModelConfig(input_width=m.frame_width, input_height=m.frame_height)


def _cmd_train(args) -> int:
    ds = D.Dataset(args.data)
    init_state = None
    if args.resume:
        resumed, _ = DrivingModel.load(args.resume)
        model_config = resumed.config
        init_state = resumed.state_tensors()
    else:
        model_config = _load_model_config(args, ds)

    seed = derive_seed(args.seed, "train")
    if args.probe:
        _write_resolved_config(args.out, "train", args, {"derived_seed": seed})
        if args.probe == "classification":
            result = TR.overfit_classification_probe(ds, model_config, seed=seed)
        else:
            result = TR.overfit_regression_probe(ds, seed=seed)
            result = {k: v for k, v in result.items() if not k.endswith("losses")}
        with open(Path(args.out) / "probe.json", "w", encoding="utf-8") as f:
            json.dump(result, f, indent=1, sort_keys=True)
            f.write("\n")
        print(json.dumps(result, indent=1, sort_keys=True))
        return 0

    augment = D.AugmentationPolicy() if args.augment else D.AugmentationPolicy.disabled()
    train_config = TR.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer,
        lr=args.lr, seed=seed, overfit_n=args.overfit_n, augment=augment)
    _write_resolved_config(args.out, "train", args, {"derived_seed": seed})

    bridge = None
    if args.serve_port is not None:
        bridge = VizBridge(port=args.serve_port).start()
        print(f"bridge listening on ws://{bridge.host}:{bridge.port}")

    def progress(snapshot: dict) -> None:
        if snapshot.get("val_loss") is not None:
            print(f"step {snapshot['step']:6d} epoch {snapshot['epoch']:3d} "
                  f"val_loss {snapshot['val_loss']:.4f} "
                  f"accel_acc {snapshot['accel_accuracy']:.3f} "
                  f"steer_within20 {snapshot['steering_within_20deg']:.3f}")
        if bridge is not None:
            bridge.publish(train_progress_message(snapshot))

    try:
        _, history = TR.train(ds, model_config, train_config, args.out,
                              progress=progress, init_state=init_state)
    finally:
        if bridge is not None:
            bridge.stop()
    final = history[-1]
    print(f"done: val_loss {final.val_loss:.4f} "
          f"accel_acc {final.accel_accuracy:.3f} "
          f"steer_within20 {final.steering_within_20deg:.3f}")
    return 0


def _cmd_evaluate(args) -> int:
    ds = D.Dataset(args.data)
    model, _ = DrivingModel.load(args.ckpt)
    snapshot = TR.evaluate(model, ds, args.split)
    report = snapshot.to_dict()
    out_dir = Path(args.report).parent if args.report else Path(".")
    _write_resolved_config(out_dir, "evaluate", args)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=1, sort_keys=True)
            f.write("\n")
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


def _cmd_drive(args) -> int:
    track = _load_track(args.track)
    car = CarParams.from_json(args.car) if args.car else CarParams()
    model = normalization = None
    if not args.oracle_bypass:
        if not args.ckpt:
            raise ControllerError("drive needs --ckpt unless --oracle-bypass is set")
        model, sidecar = DrivingModel.load(args.ckpt)
        normalization = sidecar.get("normalization")
        if normalization is None:
            raise ControllerError("checkpoint sidecar lacks normalization stats")

    bridge = None
    publish = None
    if args.serve_port is not None:
        bridge = VizBridge(port=args.serve_port).start()
        print(f"bridge listening on ws://{bridge.host}:{bridge.port}")
        publish = bridge.publish

    try:
        report = run_drive(
            model, normalization, track, car_params=car,
            duration_s=args.duration, seed=derive_seed(args.seed, "drive"),
            oracle_bypass=args.oracle_bypass, fast=args.fast,
            trajectory_path=args.trajectory, publish=publish,
            include_saliency=args.saliency)
    finally:
        if bridge is not None:
            bridge.stop()

    out_dir = Path(args.report).parent if args.report else Path(".")
    _write_resolved_config(out_dir, "drive", args,
                           {"derived_seed": derive_seed(args.seed, "drive")})
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return 0


def _cmd_render(args) -> int:
    track = _load_track(args.track)
    state = reset_to_track(CarState(), track, args.s)
    frame = render(track, state, CameraParams(), size=_parse_size(args.size),
                   seed=derive_seed(args.seed, "render"))
    write_pgm(frame, args.out)
    _write_resolved_config(Path(args.out).parent, "render", args)
    print(f"wrote {frame.width}x{frame.height} frame to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    bridge = VizBridge(port=args.port, host=args.host).start()
    print(f"bridge listening on ws://{bridge.host}:{bridge.port}")
    httpd = None
    if args.ui_dir:
        import functools
        import http.server
        import threading
        handler = functools.partial(
            http.server.SimpleHTTPRequestHandler, directory=args.ui_dir)
        httpd = http.server.ThreadingHTTPServer((args.host, args.http_port), handler)
        threading.Thread(target=httpd.serve_forever, daemon=True).start()
        print(f"console at http://{args.host}:{httpd.server_address[1]}/")
    _write_resolved_config(".", "serve", args)
    try:
        if args.replay:
            with open(args.replay, encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line:
                        bridge.publish(json.loads(line))
                        time.sleep(1.0 / args.replay_hz)
            print("replay finished; serving until interrupted")
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        bridge.stop()
        if httpd is not None:
            httpd.shutdown()
    return 0


# -- parser ---------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="ignition",
                     description="behavioral-cloning racing stack")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="synthesize a labeled dataset")
    p.add_argument("--track", default="road_course",
                   help="bundled track name or JSON path")
    p.add_argument("--duration", type=float, required=True,
                   help="simulated seconds of oracle driving")
    p.add_argument("--size", default="64x36", help="frame size, e.g. 64x36")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.add_argument("--car", help="CarParams JSON path")
    p.add_argument("--oracle", help="OracleParams JSON path")
    p.add_argument("--split", choices=("random", "contiguous"), default="random")
    _add_threads_flag(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("stats", help="print label histograms, write stats.json")
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train", help="train a model (or run an overfit probe)")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="ModelConfig JSON path")
    p.add_argument("--resume", help="checkpoint to warm-start from")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/run")
    p.add_argument("--overfit-n", type=int, default=None,
                   help="restrict training to the first N train records")
    p.add_argument("--probe", choices=("classification", "regression"),
                   help="run an overfit probe instead of full training")
    p.add_argument("--no-augment", dest="augment", action="store_false")
    p.add_argument("--serve-port", type=int, default=None,
                   help="publish train_progress on a websocket bridge")
    _add_threads_flag(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--report", help="write metrics JSON here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("drive", help="closed-loop drive a track")
    p.add_argument("--ckpt", help="trained checkpoint (omit with --oracle-bypass)")
    p.add_argument("--track", default="road_course")
    p.add_argument("--duration", type=float, default=120.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--car", help="CarParams JSON path")
    p.add_argument("--report", help="write drive report JSON here")
    p.add_argument("--trajectory", help="write trajectory CSV here")
    p.add_argument("--oracle-bypass", action="store_true",
                   help="let the oracle drive (simulator/track shakeout)")
    p.add_argument("--fast", dest="fast", action="store_true", default=True,
                   help="run as fast as possible (default)")
    p.add_argument("--realtime", dest="fast", action="store_false",
                   help="pace the loop at 10 Hz wall clock")
    p.add_argument("--saliency", action="store_true",
                   help="attach saliency maps to published frames")
    p.add_argument("--serve-port", type=int, default=None,
                   help="publish eval frames on a websocket bridge")
    p.set_defaults(func=_cmd_drive)

    p = sub.add_parser("render", help="render one frame to a PGM file")
    p.add_argument("--track", default="road_course")
    p.add_argument("--s", type=float, default=0.0, help="arclength along track")
    p.add_argument("--size", default="320x180")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="frame.pgm")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("serve", help="run the websocket bridge standalone")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="also serve a static console from this dir")
    p.add_argument("--http-port", type=int, default=8000)
    p.add_argument("--replay", help="JSONL file of messages to publish")
    p.add_argument("--replay-hz", type=float, default=20.0)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return 1
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as e:
        print(f"ignition {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
