"""Command-line entry point: ``ehpi <subcommand> ...``.

Every option may also come from a ``key=value`` config file passed with
``--config``; explicit command-line flags override the file. The effective
configuration is written as ``config.txt`` into each output directory.

Exit codes: 0 success, 2 usage or configuration error, 3 data or runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synthgen
from .ehpi import AugmentConfig, Ehpi, dump_png
from .errors import ConfigError, EhpiError, EmptyClass, FormatError
from .micronn import EhpiNet, NetConfig, TrainConfig, load_checkpoint, save_checkpoint, train
from .micronn.train import DEFAULT_SEEDS
from .optical_flow import read_pgm
from .pipeline_io import (
    ActionStream,
    Frame,
    HumanRecord,
    PoseSequence,
    evaluate,
    read_manifest,
    read_pose_sequence,
    sequence_windows,
    window_dataset,
    write_pose_sequence,
)
from .pose_core import Origin
from .tracking import Tracker, TrackerConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

# options that are plumbing rather than experiment parameters
_NOT_ECHOED = {"command", "config", "handler"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, keys may use dashes."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_effective_config(args: argparse.Namespace, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in sorted(vars(args).items()):
        if key in _NOT_ECHOED or value is None:
            continue
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    (out / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _csv_strs(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def resolve_threads(requested: int | None, default: int | None) -> int | None:
    if requested is not None:
        return requested
    env = os.environ.get("EHPI_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"EHPI_THREADS must be an integer, got {env!r}") from exc
    return default


def _thread_limit(n: int | None):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _out(path):
    """Text sink: a file when a path is given, stdout otherwise."""
    if path is None:
        return nullcontext(sys.stdout)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8")


# -- subcommands ------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        cams = synthgen.standard_cameras(args.cameras)
        spec = synthgen.DatasetSpec(
            actions=args.actions,
            per_action=args.per_action,
            cameras=cams,
            duration_s=args.duration,
            fps=args.fps,
            val_fraction=args.val_fraction,
            test_fraction=args.test_fraction,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifests = synthgen.build_dataset(spec, args.seed, args.out)
    write_effective_config(args, args.out)
    for name in ("clean", "noisy", "combined"):
        man = manifests[name]
        counts = {s: sum(r.split == s for r in man.rows) for s in ("train", "val", "test")}
        print(
            f"manifest={Path(args.out) / f'manifest_{name}.csv'} sequences={len(man.rows)} "
            + " ".join(f"{k}={v}" for k, v in counts.items())
        )
    return EXIT_OK


def _configs(args):
    try:
        net_cfg = NetConfig(channels=args.channels)
        train_cfg = TrainConfig(
            batch_size=args.batch_size,
            lr0=args.lr,
            momentum=args.momentum,
            weight_decay=args.weight_decay,
            epochs=args.epochs,
            lr_step=args.lr_step,
            lr_gamma=args.lr_gamma,
            smoothing_window=args.smoothing_window,
            augment=AugmentConfig() if args.augment else AugmentConfig(0.0, 0.0, 0.0, 0.0),
            dtype=args.dtype,
        )
        np.dtype(args.dtype)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return net_cfg, train_cfg


def cmd_train(args) -> int:
    net_cfg, train_cfg = _configs(args)
    manifest = read_manifest(args.manifest)
    net_cfg = replace(net_cfg, num_classes=len(manifest.actions))
    variants = args.variants or None
    cache: dict = {}
    data = window_dataset(manifest, "train", variants, args.window_stride, cache=cache)
    val = window_dataset(manifest, "val", variants, args.val_stride, cache=cache)
    if len(data) == 0 or len(val) == 0:
        raise EmptyClass("manifest needs non-empty train and val splits")
    print(f"train_windows={len(data)} val_windows={len(val)} actions={','.join(manifest.actions)}")

    if args.seeds is None:
        seeds = [args.seed]
    elif args.seeds <= len(DEFAULT_SEEDS):
        seeds = list(DEFAULT_SEEDS[: args.seeds])
    else:
        seeds = [args.seed + i for i in range(args.seeds)]
    out = Path(args.out)
    write_effective_config(args, out)
    best_accs = []
    for seed in seeds:
        run_dir = out if len(seeds) == 1 else out / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)

        def log(rec, seed=seed):
            val_txt = "nan" if rec.val_acc is None else f"{rec.val_acc:.6f}"
            print(f"seed={seed} epoch={rec.epoch} lr={rec.lr:.6g} train_loss={rec.train_loss:.6f} val_acc={val_txt}",
                  flush=True)

        result = train(data, net_cfg, train_cfg, seed, val=val, log=log)
        save_checkpoint(result.best_net, run_dir / "best.ckpt")
        save_checkpoint(result.net, run_dir / "final.ckpt")
        best = result.best_val_acc
        best_accs.append(best)
        print(f"seed={seed} best_epoch={result.best_epoch} best_val_acc={best:.6f} checkpoint={run_dir / 'best.ckpt'}")
    if len(seeds) > 1:
        accs = np.asarray(best_accs)
        print(f"val_acc mean={accs.mean():.6f} std={accs.std():.6f} runs={len(accs)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    report = evaluate(net, manifest, args.split, args.variants or None, smoothing_window=args.smoothing_window)
    if args.out_dir:
        write_effective_config(args, args.out_dir)
    with _out(Path(args.out_dir) / f"report.{args.report}" if args.out_dir else None) as fh:
        if args.report == "json":
            d = report.to_dict()
            d.update(split=args.split, variants=list(args.variants or ()))
            fh.write(json.dumps(d, indent=2, sort_keys=True) + "\n")
        else:
            variants = ",".join(args.variants) if args.variants else "all"
            fh.write("split variants n_sequences n_windows accuracy_seq accuracy_ehpi\n")
            fh.write(f"{args.split} {variants} {report.n_sequences} {report.n_windows} "
                     f"{report.accuracy_seq:.6f} {report.accuracy_ehpi:.6f}\n")
            fh.write("confusion (rows=true, cols=" + ",".join(report.actions) + ",none)\n")
            for name, row in zip(report.actions, report.confusion):
                fh.write(f"{name} " + " ".join(str(int(v)) for v in row) + "\n")
    return EXIT_OK


def _load_images(image_dir, n_frames):
    paths = sorted(Path(image_dir).glob("*.pgm"))
    if len(paths) < n_frames:
        raise FormatError(f"{image_dir}: {len(paths)} PGM frames for {n_frames} pose frames")
    return paths[:n_frames]


def cmd_track(args) -> int:
    seq = read_pose_sequence(args.pose_file)
    images = _load_images(args.images, len(seq.frames)) if args.images else None
    tracker = Tracker(TrackerConfig())
    frames = []
    for i, fr in enumerate(seq.frames):
        image = read_pgm(images[i]) if images else None
        live = tracker.step([h.skeleton() for h in fr.humans], image)
        humans = [
            HumanRecord(np.array(h.skeleton.joints), h.track_id)
            for h in live
            if h.origin is Origin.DETECTED or args.keep_coasting
        ]
        frames.append(Frame(fr.frame_index, humans))
    out = PoseSequence(seq.meta, frames)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_pose_sequence(out, args.out)
        write_effective_config(args, Path(args.out).parent)
    else:
        for fr in frames:
            ids = " ".join(str(h.track_id) for h in fr.humans)
            print(f"frame_index={fr.frame_index} track_ids={ids}")
    return EXIT_OK


def cmd_infer(args) -> int:
    net = load_checkpoint(args.checkpoint)
    seq = read_pose_sequence(args.pose_file)
    actions = args.actions
    stream = ActionStream(net, seq.meta.image_w, seq.meta.image_h, smoothing_window=args.smoothing_window)
    with _out(args.out) as fh:
        for fr in seq.frames:
            for p in stream.step([h.skeleton() for h in fr.humans]):
                name = actions[p.action] if p.action < len(actions) else str(p.action)
                fh.write(f"frame_index={fr.frame_index} track_id={p.track_id} action={name} "
                         f"probability={p.probability:.6f}\n")
    return EXIT_OK


BENCH_HEADER = (
    "# stage benchmark: object detection and pose estimation are external and not measured.\n"
    "# The full-pipeline frame rate maps onto the sum of these in-scope stages:\n"
    "#   track            = detection dedupe + association (+ optical flow when images are given)\n"
    "#   encode+normalize = EHPI column encoding, buffer update and min-max normalization\n"
    "#   infer            = network forward pass + smoothing over the last predictions\n"
)


def bench_stages(net, seq: PoseSequence, repetitions: int):
    """Per-frame latency in microseconds for each stage, shape (3, frames * repetitions)."""
    detections = [[h.skeleton() for h in fr.humans] for fr in seq.frames]
    timings = []
    clock = time.perf_counter_ns
    for _ in range(repetitions):
        stream = ActionStream(net, seq.meta.image_w, seq.meta.image_h)
        for dets in detections:
            t0 = clock()
            live = stream.track(dets)
            t1 = clock()
            ids, values, _ = stream.encode(live)
            t2 = clock()
            stream.infer(ids, values)
            t3 = clock()
            timings.append((t1 - t0, t2 - t1, t3 - t2))
    return np.asarray(timings, dtype=np.float64).T / 1e3


def format_bench(us: np.ndarray, n_people: float) -> str:
    lines = [BENCH_HEADER.rstrip("\n"), f"# frames={us.shape[1]} mean_people_per_frame={n_people:.2f}",
             "stage mean_us p50_us p99_us"]
    for name, row in zip(("track", "encode+normalize", "infer"), us):
        lines.append(f"{name} {row.mean():.1f} {np.percentile(row, 50):.1f} {np.percentile(row, 99):.1f}")
    total = us.sum(axis=0)
    lines.append(f"total {total.mean():.1f} {np.percentile(total, 50):.1f} {np.percentile(total, 99):.1f}")
    lines.append(f"fps={1e6 / total.mean():.1f}")
    return "\n".join(lines)


def cmd_bench(args) -> int:
    seq = read_pose_sequence(args.pose_file)
    if args.checkpoint:
        net = load_checkpoint(args.checkpoint)
    else:
        net = EhpiNet.create(NetConfig(channels=args.channels), np.random.default_rng(args.seed))
    reps = args.repetitions
    if reps is None:
        reps = max(1, -(-args.min_frames // max(len(seq.frames), 1)))
    us = bench_stages(net, seq, reps)
    n_people = np.mean([len(fr.humans) for fr in seq.frames]) if seq.frames else 0.0
    text = format_bench(us, n_people)
    with _out(args.out) as fh:
        fh.write(text + "\n")
    return EXIT_OK


def cmd_dump_ehpi(args) -> int:
    seq = read_pose_sequence(args.pose_file)
    w = sequence_windows(seq)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.pose_file).name.split(".")[0]
    written = 0
    for k in range(0, len(w), args.stride):
        e = Ehpi(w.values[k], w.present[k])
        dump_png(e, out / f"{stem}_{int(w.track_id[k])}_{int(w.frame_index[k])}.png")
        written += 1
    write_effective_config(args, out)
    print(f"windows={len(w)} written={written} out={out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; command-line flags take precedence")
    common.add_argument("--threads", type=int, help="BLAS/OpenMP threads (fallback: EHPI_THREADS)")
    common.add_argument("--seed", type=int, default=7)

    p = _Parser(prog="ehpi", description="Pose-based action recognition toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic pose dataset")
    s.add_argument("--actions", type=_csv_strs, default=synthgen.ACTIONS)
    s.add_argument("--per-action", type=int, default=100)
    s.add_argument("--cameras", type=int, default=2)
    s.add_argument("--duration", type=float, default=3.0)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--val-fraction", type=float, default=0.33)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--out", required=True)
    s.set_defaults(handler=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="train the EHPI network")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="output directory for checkpoints")
    t.add_argument("--variants", type=_csv_strs, help="e.g. clean or clean,noisy (default: all in manifest)")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=5e-4)
    t.add_argument("--lr-step", type=int, default=50)
    t.add_argument("--lr-gamma", type=float, default=0.1)
    t.add_argument("--channels", type=_csv_ints, default=NetConfig().channels)
    t.add_argument("--window-stride", type=int, default=1, help="use every n-th window of a sequence")
    t.add_argument("--val-stride", type=int, default=1)
    t.add_argument("--smoothing-window", type=int, default=20)
    t.add_argument("--augment", type=int, choices=(0, 1), default=1)
    t.add_argument("--dtype", default="float32")
    t.add_argument("--seeds", type=int, help="repeat over this many seeds and report mean/std")
    t.set_defaults(handler=cmd_train, seed=DEFAULT_SEEDS[0])

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--variants", type=_csv_strs)
    e.add_argument("--report", default="text", choices=("text", "json"))
    e.add_argument("--smoothing-window", type=int, default=20)
    e.add_argument("--out-dir", help="write report and config here instead of stdout")
    e.set_defaults(handler=cmd_eval)

    k = sub.add_parser("track", parents=[common], help="assign track ids to a pose file")
    k.add_argument("pose_file")
    k.add_argument("--images", help="directory of PGM frames, one per pose frame in sorted order")
    k.add_argument("--out", help="output pose file (default: id summary on stdout)")
    k.add_argument("--keep-coasting", type=int, choices=(0, 1), default=0)
    k.set_defaults(handler=cmd_track)

    i = sub.add_parser("infer", parents=[common], help="per-frame smoothed action stream")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("pose_file")
    i.add_argument("--actions", type=_csv_strs, default=synthgen.ACTIONS)
    i.add_argument("--smoothing-window", type=int, default=20)
    i.add_argument("--out")
    i.set_defaults(handler=cmd_infer)

    b = sub.add_parser("bench", parents=[common], help="per-stage latency report")
    b.add_argument("pose_file")
    b.add_argument("--checkpoint", help="default: randomly initialized network")
    b.add_argument("--channels", type=_csv_ints, default=NetConfig().channels)
    b.add_argument("--repetitions", type=int)
    b.add_argument("--min-frames", type=int, default=1000)
    b.add_argument("--out")
    b.set_defaults(handler=cmd_bench)

    d = sub.add_parser("dump-ehpi", parents=[common], help="write one PNG per EHPI window")
    d.add_argument("pose_file")
    d.add_argument("--out", required=True)
    d.add_argument("--stride", type=int, default=1)
    d.set_defaults(handler=cmd_dump_ehpi)
    subs.update(synth=s, train=t, eval=e, track=k, infer=i, bench=b)
    subs["dump-ehpi"] = d
    return p, subs


def parse_args(argv=None) -> argparse.Namespace:
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    parser, subs = build_parser()
    if early.config and early.command in subs:
        sub = subs[early.command]
        values = read_config_file(early.config)
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(known) - {"command"})
        if unknown:
            raise ConfigError(f"unknown config key(s) for {early.command}: {', '.join(unknown)}")
        defaults = {}
        for key, raw in values.items():
            if key == "command":
                continue
            action = known[key]
            try:
                defaults[key] = (action.type or str)(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
            if action.choices is not None and defaults[key] not in action.choices:
                raise ConfigError(f"config key {key}: {raw!r} not in {list(action.choices)}")
            action.required = False
            if action.nargs is None and not action.option_strings:
                action.nargs = "?"
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


_DEFAULT_THREADS = {"train": os.cpu_count(), "eval": os.cpu_count(), "bench": 1}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        threads = resolve_threads(args.threads, _DEFAULT_THREADS.get(args.command))
        args.threads = threads
        with _thread_limit(threads):
            return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EhpiError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
