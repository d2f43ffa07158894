"""Command-line interface: train, enhance, evaluate, inspect.

Option precedence is command-line flag over config-file entry over built-in
default. Config files are flat ``key=value`` lines where keys are the long
flag names with underscores; ``#`` starts a comment.

Exit codes: 0 success, 2 usage or input problem, 3 corrupt or unreadable
checkpoint, 1 unexpected internal failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .enhancer import EnhanceSpec, enhance
from .imaging import (
    ImageBuffer,
    ImageFormatError,
    from_unit,
    load_image,
    save_image,
    scan_corpus,
    to_unit,
)
from .losses import ExposureTarget, LossWeights
from .metrics import evaluate_pairs
from .network import CurveNetConfig, build, describe, forward
from .trainer import (
    AdamState,
    CheckpointError,
    TrainConfig,
    history_csv,
    load_checkpoint,
    restore,
    save_checkpoint,
    train,
)

THREADS_ENV = "LUCENT_THREADS"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CHECKPOINT = 3


class UsageError(ValueError):
    """Bad flags, config entries, or missing inputs."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# Every settable option: key -> (converter, default). Command parsers pick
# the subset they expose; config files may set any of them.
_OPTIONS: dict[str, tuple] = {
    "epochs": (int, 1),
    "steps": (int, None),
    "batch_size": (int, 1),
    "image_size": (int, 512),
    "width": (int, 32),
    "branch_layers": (int, 3),
    "iterations": (int, None),
    "lr": (float, 1e-4),
    "seed": (int, 0),
    "exposure_level": (float, 0.6),
    "exposure_patch": (int, 16),
    "w_tv": (float, 1600.0),
    "w_spa": (float, 1.0),
    "w_color": (float, 5.0),
    "w_exp": (float, 10.0),
    "w_seg": (float, 0.1),
    "w_nr": (float, 0.1),
    "clamp": (_parse_bool, True),
    "curve_maps": (_parse_bool, False),
}


def _read_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} not found")
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown option {key!r}")
        entries[key] = value.strip()
    return entries


def _resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    """Merge defaults, config-file entries, and explicit flags."""
    merged = {k: _OPTIONS[k][1] for k in keys}
    if getattr(args, "config", None):
        for key, text in _read_config_file(args.config).items():
            if key in merged:
                try:
                    merged[key] = _OPTIONS[key][0](text)
                except ValueError as exc:
                    raise UsageError(f"config option {key}: {exc}") from None
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value options file; flags override it")


_TRAIN_KEYS = [
    "epochs", "steps", "batch_size", "image_size", "width", "branch_layers",
    "iterations", "lr", "seed", "exposure_level", "exposure_patch",
    "w_tv", "w_spa", "w_color", "w_exp", "w_seg", "w_nr",
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lucentvision",
        description="Zero-shot low-light image enhancement toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a curve network on an unlabeled image corpus")
    _add_common(p_train)
    p_train.add_argument("--input", required=True, help="directory of training images (.png/.ppm)")
    p_train.add_argument("--checkpoint", required=True, help="checkpoint to write (resumes if present)")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--steps", type=int, help="hard cap on optimizer steps")
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--image-size", type=int, dest="image_size", help="square training resolution")
    p_train.add_argument("--width", type=int, help="channels per branch layer")
    p_train.add_argument("--branch-layers", type=int, dest="branch_layers")
    p_train.add_argument("--iterations", type=int, help="enhancement iterations")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--exposure-level", type=float, dest="exposure_level")
    p_train.add_argument("--exposure-patch", type=int, dest="exposure_patch")
    p_train.add_argument("--w-tv", type=float, dest="w_tv")
    p_train.add_argument("--w-spa", type=float, dest="w_spa")
    p_train.add_argument("--w-color", type=float, dest="w_color")
    p_train.add_argument("--w-exp", type=float, dest="w_exp")
    p_train.add_argument("--w-seg", type=float, dest="w_seg")
    p_train.add_argument("--w-nr", type=float, dest="w_nr")

    p_enh = sub.add_parser("enhance", help="apply a trained checkpoint to images")
    _add_common(p_enh)
    p_enh.add_argument("--checkpoint", required=True)
    p_enh.add_argument("--input", required=True, help="image file or directory")
    p_enh.add_argument("--output", required=True, help="output file or directory")
    p_enh.add_argument("--iterations", type=int, help="override the checkpoint's iteration count")
    p_enh.add_argument(
        "--clamp",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="clip outputs into [0, 1] before quantizing (default: on)",
    )
    p_enh.add_argument(
        "--curve-maps",
        dest="curve_maps",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="also save the estimated curve maps, remapped from [-1, 1] to 0..255",
    )

    p_eval = sub.add_parser("evaluate", help="score enhanced images against references")
    _add_common(p_eval)
    p_eval.add_argument("--input", required=True, help="directory of enhanced images")
    p_eval.add_argument("--reference", required=True, help="directory of reference images")
    p_eval.add_argument("--output", help="write per-image CSV here")

    p_ins = sub.add_parser("inspect", help="print checkpoint metadata and architecture")
    _add_common(p_ins)
    p_ins.add_argument("--checkpoint", required=True)

    return parser


def cmd_train(args: argparse.Namespace) -> int:
    opt = _resolve(args, _TRAIN_KEYS)
    corpus_dir = Path(args.input)
    if not corpus_dir.is_dir():
        raise UsageError(f"corpus directory {corpus_dir} not found")

    ckpt_path = Path(args.checkpoint)
    state: Optional[AdamState] = None
    start_epoch = 0
    if ckpt_path.exists():
        ckpt = load_checkpoint(ckpt_path)
        net, state = restore(ckpt)
        start_epoch = ckpt.epoch
        print(f"resuming from {ckpt_path} (step {state.step}, epoch {start_epoch})")
    else:
        net_config = CurveNetConfig(
            branch_layers=opt["branch_layers"],
            width=opt["width"],
            iterations=opt["iterations"] if opt["iterations"] is not None else 8,
            seed=opt["seed"],
        )
        net = build(net_config)

    config = TrainConfig(
        learning_rate=opt["lr"],
        epochs=opt["epochs"],
        max_steps=opt["steps"],
        batch_size=opt["batch_size"],
        image_size=opt["image_size"],
        seed=opt["seed"],
        weights=LossWeights(
            tv=opt["w_tv"], spa=opt["w_spa"], color=opt["w_color"],
            exposure=opt["w_exp"], seg=opt["w_seg"], nr=opt["w_nr"],
        ),
        exposure=ExposureTarget(level=opt["exposure_level"], patch=opt["exposure_patch"]),
    )
    result = train(net, corpus_dir, config, state=state, start_epoch=start_epoch)

    save_checkpoint(net, result.state, ckpt_path, epoch=result.epochs_completed, train_seed=config.seed)
    history_path = ckpt_path.with_name(ckpt_path.name + ".history.csv")
    history_path.write_text(history_csv(result.history), encoding="utf-8")
    if result.history:
        last = result.history[-1]
        print(f"trained {len(result.history)} steps; final loss {last.total:.6f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"loss history: {history_path}")
    return EXIT_OK


def _curve_map_pixels(values: np.ndarray) -> ImageBuffer:
    # Remap curve parameters from [-1, 1] to 0..255 (so 128 ~ identity).
    scaled = np.floor((values + 1.0) * 0.5 * 255.0 + 0.5)
    pixels = np.clip(scaled, 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return ImageBuffer(width=pixels.shape[1], height=pixels.shape[0], data=pixels)


def cmd_enhance(args: argparse.Namespace) -> int:
    opt = _resolve(args, ["iterations", "clamp", "curve_maps"])
    threads = _thread_count()

    ckpt = load_checkpoint(Path(args.checkpoint))
    net, _ = restore(ckpt)
    for _, p in net.parameters():
        p.requires_grad = False
    iterations = opt["iterations"] if opt["iterations"] is not None else net.config.iterations
    spec = EnhanceSpec(iterations=iterations, clamp_output=False)

    in_path = Path(args.input)
    out_path = Path(args.output)
    if in_path.is_dir():
        inputs = scan_corpus(in_path)
        if not inputs:
            raise UsageError(f"no .png or .ppm images in {in_path}")
        out_dir = out_path
    elif in_path.is_file():
        inputs = [in_path]
        out_dir = None if out_path.suffix.lower() in (".png", ".ppm") else out_path
    else:
        raise UsageError(f"input {in_path} not found")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def process(src: Path) -> float:
        started = time.perf_counter()
        x = to_unit(load_image(src))
        curves = forward(net, x)
        result = enhance(x, curves, spec)
        buffer = from_unit(result, clamp=opt["clamp"])
        dst = out_dir / src.name if out_dir is not None else out_path
        save_image(dst, buffer)
        if opt["curve_maps"]:
            curve_dst = (out_dir or dst.parent) / f"{src.stem}.curves.png"
            save_image(curve_dst, _curve_map_pixels(curves.values.data))
        return time.perf_counter() - started

    failures: list[str] = []
    timings: list[Optional[float]] = [None] * len(inputs)
    if threads > 1 and len(inputs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {i: pool.submit(process, src) for i, src in enumerate(inputs)}
        for i, src in enumerate(inputs):
            try:
                timings[i] = futures[i].result()
            except (OSError, ValueError) as exc:
                failures.append(f"{src}: {exc}")
    else:
        for i, src in enumerate(inputs):
            try:
                timings[i] = process(src)
            except (OSError, ValueError) as exc:
                failures.append(f"{src}: {exc}")

    for src, dt in zip(inputs, timings):
        if dt is not None:
            print(f"{src.name}: {dt:.3f}s")
    for line in failures:
        print(f"error: {line}", file=sys.stderr)
    if not any(dt is not None for dt in timings):
        raise UsageError("no image could be enhanced")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    for label, d in (("enhanced", args.input), ("reference", args.reference)):
        if not Path(d).is_dir():
            raise UsageError(f"{label} directory {d} not found")
    report = evaluate_pairs(args.input, args.reference)
    print(report.format_table())
    if args.output:
        Path(args.output).write_text(report.to_csv(), encoding="utf-8")
        print(f"csv: {args.output}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(Path(args.checkpoint))
    net, state = restore(ckpt)
    print(f"checkpoint: {args.checkpoint}")
    print(f"format version: {ckpt.version}")
    for key in sorted(ckpt.metadata):
        print(f"{key}: {ckpt.metadata[key]}")
    print()
    print(describe(net).format_table())
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (UsageError, ImageFormatError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
