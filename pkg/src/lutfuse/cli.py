"""Command-line surface: fuse, train, extract-lut, eval, bench.

Exit codes: 0 success, 2 argument errors, 3 I/O errors, 4 shape/format
errors. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import time

import numpy as np

from .baseline import MertensConfig, mertens_fuse
from .errors import (ConfigError, FormatError, FusionError, IoError,
                     MetadataError, NumericsError, ShapeError,
                     StackShapeError, WeightDomainError)
from .imgio import (YuvImage, load_sequence, load_sequence_dir, read_image,
                    read_lut, rgb_image_to_yuv, write_lut, write_png,
                    yuv_to_rgb_image)
from .lut_engine import FusionConfig, fuse, fuse_network
from .metrics import evaluate, report_tsv
from .network import load_params, save_params
from .synth import synthetic_stack
from .training import TrainConfig, extract_luts, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4


class _UsageError(Exception):
    pass


def _parse_evs(text):
    try:
        evs = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise _UsageError(f"cannot parse EV list {text!r}")
    if not evs:
        raise _UsageError("empty EV list")
    if any(b <= a for a, b in zip(evs, evs[1:])):
        raise _UsageError(f"EVs must be strictly increasing: {evs}")
    return evs


def _fusion_config(args):
    return FusionConfig(upsample=getattr(args, "upsample", "gfu"))


def _dump_weights(directory, weights):
    os.makedirs(directory, exist_ok=True)
    for i, plane in enumerate(weights):
        arr = np.clip(plane * 255.0, 0, 255).astype(np.uint8)
        write_png(os.path.join(directory, f"weight_{i}.png"), arr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fuse(args):
    sources = [args.lut is not None, args.checkpoint is not None,
               args.method is not None]
    if sum(sources) != 1:
        raise _UsageError("exactly one of --lut, --checkpoint, --method is required")
    stack = load_sequence(args.inputs, _parse_evs(args.evs))
    cfg = _fusion_config(args)
    weights = None
    if args.lut is not None:
        lut = read_lut(args.lut)
        fused, weights = fuse(stack, lut, cfg, threads=args.threads,
                              return_weights=True)
    elif args.checkpoint is not None:
        params = load_params(args.checkpoint)
        fused, weights = fuse_network(stack, params, cfg, threads=args.threads,
                                      return_weights=True)
    else:
        if args.method != "mertens":
            raise _UsageError(f"unknown method {args.method!r}")
        fused = mertens_fuse(stack, MertensConfig(levels=args.pyramid_levels))
    write_png(args.out, yuv_to_rgb_image(fused))
    if args.dump_weights and weights is not None:
        _dump_weights(args.dump_weights, weights)
    return EXIT_OK


def _load_dataset(data_dir):
    try:
        entries = sorted(os.listdir(data_dir))
    except OSError as exc:
        raise IoError(f"cannot list {data_dir}: {exc}") from exc
    dirs = [os.path.join(data_dir, e) for e in entries
            if os.path.isdir(os.path.join(data_dir, e))]
    if not dirs:
        raise IoError(f"no sequence directories under {data_dir}")
    return [(os.path.basename(d), load_sequence_dir(d)) for d in dirs]


def cmd_train(args):
    dataset = [stack for _, stack in _load_dataset(args.data)]
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed)
    log_path = args.log or args.out_checkpoint + ".log"
    params = train(dataset, cfg, channels=args.channels, log_path=log_path)
    save_params(params, args.out_checkpoint)
    return EXIT_OK


def cmd_extract_lut(args):
    params = load_params(args.checkpoint)
    lut = extract_luts(params, probe_size=args.probe_size)
    write_lut(lut, args.out)
    return EXIT_OK


def cmd_eval(args):
    sources = [args.lut is not None, args.checkpoint is not None,
               args.method is not None]
    if sum(sources) != 1:
        raise _UsageError("exactly one of --lut, --checkpoint, --method is required")
    cfg = _fusion_config(args)
    rows = []
    for name, stack in _load_dataset(args.data):
        if args.lut is not None:
            fused = fuse(stack, read_lut(args.lut), cfg)
        elif args.checkpoint is not None:
            fused = fuse_network(stack, load_params(args.checkpoint), cfg)
        else:
            fused = mertens_fuse(stack)
        ref_path = os.path.join(args.data, name, "reference.png")
        reference = None
        if os.path.exists(ref_path):
            kind, arr = read_image(ref_path)
            if kind == "rgb":
                reference = rgb_image_to_yuv(arr)
            else:
                flat = np.full(arr.shape, 128, np.uint8)
                reference = YuvImage(arr, flat, flat.copy())
        rows.append(evaluate(fused, reference, stack, name=name))
    text = report_tsv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _time_call(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return times


def cmd_bench(args):
    if args.repeat < 5:
        raise _UsageError("--repeat must be at least 5")
    resolutions = []
    for tok in args.resolutions.split(","):
        try:
            resolutions.append(int(tok))
        except ValueError:
            raise _UsageError(f"bad resolution {tok!r}")
    paths = args.paths.split(",")
    for p in paths:
        if p not in ("lut", "network", "mertens"):
            raise _UsageError(f"unknown bench path {p!r}")

    from .network import init_params
    params = init_params(3, channels=args.channels, seed=7)
    lut = extract_luts(params, probe_size=16) if "lut" in paths else None

    print("method\tresolution\tupsample\tmedian_ms\tmean_ms\tmin_ms\tthreads")
    for res in resolutions:
        stack = synthetic_stack(res, res, seed=11)
        jobs = []
        for mode in ("gfu", "bilinear"):
            cfg = FusionConfig(upsample=mode)
            if "lut" in paths:
                jobs.append(("lut", mode,
                             lambda c=cfg: fuse(stack, lut, c, threads=args.threads)))
            if "network" in paths:
                jobs.append(("network", mode,
                             lambda c=cfg: fuse_network(stack, params, c,
                                                        threads=args.threads)))
        if "mertens" in paths:
            jobs.append(("mertens", "-", lambda: mertens_fuse(stack)))
        for label, mode, fn in jobs:
            times = _time_call(fn, args.repeat)
            print(f"{label}\t{res}\t{mode}\t{statistics.median(times):.3f}"
                  f"\t{statistics.mean(times):.3f}\t{min(times):.3f}\t{args.threads}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="lutfuse",
                                 description="Multi-exposure fusion with learned 1D LUTs")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse an exposure sequence into one image")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--evs", required=True, help="comma-separated EVs, ascending")
    p.add_argument("--lut")
    p.add_argument("--checkpoint")
    p.add_argument("--method", choices=["mertens"])
    p.add_argument("--out", required=True)
    p.add_argument("--upsample", choices=["gfu", "bilinear"], default="gfu")
    p.add_argument("--pyramid-levels", type=int, default=None)
    p.add_argument("--dump-weights")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train", help="train weight predictor on sequence dirs")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=24)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract-lut", help="distill a checkpoint into a LUT file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probe-size", type=int, default=128)
    p.set_defaults(func=cmd_extract_lut)

    p = sub.add_parser("eval", help="fuse a dataset and report metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--lut")
    p.add_argument("--checkpoint")
    p.add_argument("--method", choices=["mertens"])
    p.add_argument("--upsample", choices=["gfu", "bilinear"], default="gfu")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the fusion paths on synthetic stacks")
    p.add_argument("--resolutions", default="512,1024,2048")
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--paths", default="lut,network,mertens")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--channels", type=int, default=24)
    p.set_defaults(func=cmd_bench)
    return ap


def _join_ev_flag(argv):
    """Rewrite `--evs -2,0,2` to `--evs=-2,0,2` so argparse does not read a
    leading negative EV as an option string."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--evs" and i + 1 < len(argv):
            out.append(f"--evs={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    argv = _join_ev_flag(list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ConfigError, MetadataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StackShapeError, ShapeError, FormatError, WeightDomainError,
            NumericsError, FusionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
