"""Command-line entry point: ``audiostego <command> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 checkpoint or permission error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import audio, packer
from .errors import CheckpointError, ConfigError, InputError, PermissionDenied, StegoError
from .fileio import atomic_path, atomic_write_bytes

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _writable(path: Path) -> None:
    """Fail early (exit 2) when the output location cannot take a file."""
    try:
        with tempfile.NamedTemporaryFile(dir=path.parent, prefix=".probe."):
            pass
    except OSError as exc:
        raise DataError(f"cannot write to {path}: {exc}") from exc


def _read_image(path: str, size: int) -> np.ndarray:
    from .datasets import load_image
    try:
        return load_image(path, size)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def _load_model(paths):
    from .pipeline import Model
    try:
        return Model.load(*paths)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {exc.filename}") from exc
    except ConfigError as exc:
        raise CheckpointError(str(exc)) from exc


# -- commands -----------------------------------------------------------------

def cmd_train(args) -> str:
    from .datasets import build_index
    from .pipeline import train_model
    from .trainer import TrainConfig

    config = TrainConfig.load(args.config)
    overrides = {k: v for k, v in {"seed": args.seed, "image_size": args.size, "format": args.format}.items()
                 if v is not None}
    if overrides:
        config = TrainConfig.from_dict({**config.to_dict(), **overrides})
    out = Path(args.out)
    _writable(out)
    index = build_index(args.images, args.audio, args.split_ratio, config.seed)
    model, history = train_model(config, index, log_every=10)
    written = [out]
    losses = out.with_name(out.name + ".losses.csv")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(history[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(history)
    model.save(out)
    atomic_write_bytes(losses, buf.getvalue().encode())
    written.append(losses)
    if config.depth > 1:
        for k in model.layers:
            layer_path = out.with_name(f"{out.stem}.layer{k}{out.suffix}")
            model.save(layer_path, layers=[k])
            written.append(layer_path)
    last = history[-1]
    return f"trained {last['step']} steps, final loss {last['total']:.5f}; wrote " + ", ".join(map(str, written))


def _source_len(meta: dict | None, duration: float | None, key: str = "source_len", level: int | None = None) -> int:
    if duration is not None:
        return packer.n_samples_for(duration)
    if meta is None:
        raise UsageError("container has no metadata; pass --duration")
    try:
        if level is not None:
            return int(meta["levels"][level][key])
        return int(meta[key])
    except (KeyError, IndexError, TypeError, ValueError):
        raise UsageError("container metadata is incomplete; pass --duration") from None


def cmd_embed(args) -> str:
    from .pipeline import write_png

    model = _load_model(args.checkpoint)
    image = _read_image(args.image, model.size)
    wave = audio.load_wav(args.audio)
    container = model.embed(image, wave)
    meta = None if args.no_metadata else {
        "format": model.format.value, "duration_s": wave.duration, "source_len": len(wave),
        "channels": model.channels}
    out = Path(args.out)
    with atomic_path(out) as tmp:
        write_png(tmp, container, meta)
    return f"embedded {wave.duration:.2f} s ({model.format.value}, c={model.channels}) into {out}"


def _read_container(path: str, model):
    from .pipeline import read_png
    arr, meta = read_png(path)
    if arr.shape[:2] != (model.size, model.size):
        raise DataError(f"container is {arr.shape[1]}x{arr.shape[0]}, checkpoint expects {model.size}x{model.size}")
    return arr, meta


def cmd_reveal(args) -> str:
    model = _load_model(args.checkpoint)
    container, meta = _read_container(args.image, model)
    n = _source_len(meta, args.duration)
    wave = model.reveal(container, n)
    out = Path(args.out)
    with atomic_path(out) as tmp:
        audio.save_wav(tmp, wave)
    return f"revealed {wave.duration:.2f} s of audio to {out}"


def cmd_nested_embed(args) -> str:
    from .pipeline import write_png

    model = _load_model(args.checkpoint)
    for k in range(1, model.depth + 1):
        model.layer(k)
    image = _read_image(args.image, model.size)
    waves = [audio.load_wav(p) for p in args.audio]
    container = model.nested_embed(image, waves)
    meta = None if args.no_metadata else {
        "format": model.format.value, "channels": model.channels, "depth": model.depth,
        "levels": [{"source_len": len(w), "duration_s": w.duration} for w in waves]}
    out = Path(args.out)
    with atomic_path(out) as tmp:
        write_png(tmp, container, meta)
    return f"embedded {len(waves)} clips at depth {model.depth} into {out}"


def cmd_nested_reveal(args) -> str:
    model = _load_model(args.checkpoint)
    level = args.level
    if not 1 <= level <= model.depth:
        raise UsageError(f"--level must be in [1, {model.depth}]")
    for k in range(1, level + 1):
        model.layer(k)
    container, meta = _read_container(args.image, model)
    if args.duration:
        if len(args.duration) < level:
            raise UsageError(f"level {level} needs {level} --duration values")
        lens = [packer.n_samples_for(d) for d in args.duration]
    else:
        lens = [_source_len(meta, None, level=k) for k in range(level)]
    waves = model.nested_reveal(container, level, lens)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, wave in enumerate(waves, start=1):
        path = out_dir / f"level{k}.wav"
        with atomic_path(path) as tmp:
            audio.save_wav(tmp, wave)
        paths.append(path)
    return f"revealed {len(paths)} clip(s): " + ", ".join(map(str, paths))


def info_lines(duration: float, fmt: str, size: int = packer.IMAGE_SIZE) -> list[str]:
    c = packer.channels_for(duration, fmt, size, size)
    c_raw = packer.channels_for(duration, "raw", size, size)
    n = packer.n_samples_for(duration)
    if fmt == "mel":
        used = audio.N_MELS * audio.content_frames(n)
    elif fmt == "raw":
        used = n
    else:
        used = 2 * packer.STFT_BINS * -(-n // packer.STFT_HOP)
    ratio = Fraction(c, c_raw)
    return [
        f"duration: {duration:g} s ({n} samples)",
        f"format: {fmt}",
        f"container: {size}x{size}",
        f"c={c}",
        f"padded cells: {c * size * size - used}",
        f"ratio vs raw: {ratio.numerator}/{ratio.denominator} ({float(ratio):.3f})",
    ]


def cmd_info(args) -> str:
    return "\n".join(info_lines(args.duration, args.format, args.size or packer.IMAGE_SIZE))


def cmd_eval(args) -> str:
    from .datasets import build_index
    from .metrics import capacity_sweep

    models = {}
    for path in args.checkpoint:
        model = _load_model([path])
        models[tuple(model.config.duration_range_s)] = model
    ranges = sorted(models, key=lambda r: (r[1], r[0]))
    index = build_index(args.images, args.audio, args.split_ratio, args.seed or 0)
    report = capacity_sweep(models, index, ranges, n_samples=args.n_samples, split=args.split)
    out = Path(args.out)
    _writable(out)
    atomic_write_bytes(out, report.to_csv().encode())
    table = report.to_table()
    atomic_write_bytes(out.with_suffix(".txt"), (table + "\n").encode())
    return table


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="audiostego", description="Hide audio inside an image with an invertible network.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--images", required=True)
    t.add_argument("--audio", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--size", type=int, choices=(160, 64))
    t.add_argument("--format", choices=("mel", "raw", "stft"))
    t.add_argument("--split-ratio", type=float, default=0.8)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="hide a WAV inside an image")
    e.add_argument("--checkpoint", required=True, action="append")
    e.add_argument("--image", required=True)
    e.add_argument("--audio", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--no-metadata", action="store_true", help="omit the PNG text chunk")
    e.set_defaults(func=cmd_embed)

    r = sub.add_parser("reveal", help="recover the WAV from a container PNG")
    r.add_argument("--checkpoint", required=True, action="append")
    r.add_argument("--image", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--duration", type=float)
    r.set_defaults(func=cmd_reveal)

    ne = sub.add_parser("nested-embed", help="hide one clip per access level")
    ne.add_argument("--checkpoint", required=True, action="append")
    ne.add_argument("--image", required=True)
    ne.add_argument("--audio", required=True, action="append", help="one per level, level 1 first")
    ne.add_argument("--out", required=True)
    ne.add_argument("--no-metadata", action="store_true")
    ne.set_defaults(func=cmd_nested_embed)

    nr = sub.add_parser("nested-reveal", help="recover clips up to an access level")
    nr.add_argument("--checkpoint", required=True, action="append")
    nr.add_argument("--image", required=True)
    nr.add_argument("--level", type=int, required=True)
    nr.add_argument("--out", required=True, help="output directory")
    nr.add_argument("--duration", type=float, action="append")
    nr.set_defaults(func=cmd_nested_reveal)

    i = sub.add_parser("info", help="channel arithmetic for a clip length")
    i.add_argument("--duration", type=float, required=True)
    i.add_argument("--format", choices=("mel", "raw", "stft"), default="mel")
    i.add_argument("--size", type=int, choices=(160, 64))
    i.set_defaults(func=cmd_info)

    ev = sub.add_parser("eval", help="capacity sweep over trained checkpoints")
    ev.add_argument("--checkpoint", required=True, action="append")
    ev.add_argument("--images", required=True)
    ev.add_argument("--audio", required=True)
    ev.add_argument("--out", required=True, help="CSV path; a .txt table is written alongside")
    ev.add_argument("--split", choices=("train", "test"), default="test")
    ev.add_argument("--split-ratio", type=float, default=0.8)
    ev.add_argument("--n-samples", type=int)
    ev.add_argument("--seed", type=int)
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        print(args.func(args))
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, PermissionDenied) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, InputError, StegoError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
