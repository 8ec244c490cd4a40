"""Corpus indexing and (image, packed secret) pair generation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from . import audio, packer
from .audio import Waveform
from .errors import InputError
from .packer import Format, PackedSecret

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
AUDIO_SUFFIXES = {".wav"}


@dataclass(frozen=True)
class AudioEntry:
    path: Path
    duration: float


@dataclass(frozen=True)
class CorpusIndex:
    train_images: tuple[Path, ...]
    test_images: tuple[Path, ...]
    train_audio: tuple[AudioEntry, ...]
    test_audio: tuple[AudioEntry, ...]
    seed: int = 0

    def images(self, split: str = "train") -> tuple[Path, ...]:
        return self.train_images if split == "train" else self.test_images

    def audio(self, split: str = "train") -> tuple[AudioEntry, ...]:
        return self.train_audio if split == "train" else self.test_audio

    def __len__(self):
        return max(len(self.train_images), len(self.train_audio))

    def size(self, split: str = "train") -> int:
        return max(len(self.images(split)), len(self.audio(split)))


def _scan(root: Path, suffixes: set[str]) -> list[Path]:
    if not root.is_dir():
        raise InputError(f"not a directory: {root}")
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in suffixes)


def _usable_image(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.convert("RGB").load()
        return True
    except (UnidentifiedImageError, OSError) as exc:
        log.warning("skipping unreadable image %s: %s", path, exc)
        return False


def _audio_entry(path: Path) -> AudioEntry | None:
    try:
        wave = audio.load_wav(path)
    except InputError as exc:
        log.warning("skipping unreadable audio %s: %s", path, exc)
        return None
    return AudioEntry(path, wave.duration)


def _split(items: list, ratio: float, rng: np.random.Generator) -> tuple[tuple, tuple]:
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    n_train = int(round(ratio * len(items)))
    if len(items) > 1:
        n_train = min(max(n_train, 1), len(items) - 1)
    return tuple(shuffled[:n_train]), tuple(shuffled[n_train:])


def build_index(image_dir: str | Path, audio_dir: str | Path, split_ratio: float = 0.8,
                seed: int = 0) -> CorpusIndex:
    """Scan both trees recursively, drop undecodable files, shuffle and split."""
    if not 0 < split_ratio <= 1:
        raise InputError(f"split_ratio must be in (0, 1], got {split_ratio}")
    images = _scan(Path(image_dir), IMAGE_SUFFIXES)
    if not images:
        raise InputError(f"no images found under {image_dir}")
    clips = _scan(Path(audio_dir), AUDIO_SUFFIXES)
    if not clips:
        raise InputError(f"no audio found under {audio_dir}")
    images = [p for p in images if _usable_image(p)]
    entries = [e for e in map(_audio_entry, clips) if e is not None]
    if not images:
        raise InputError(f"every image under {image_dir} was unreadable")
    if not entries:
        raise InputError(f"every clip under {audio_dir} was unreadable")
    rng = np.random.default_rng(seed)
    tr_i, te_i = _split(images, split_ratio, rng)
    tr_a, te_a = _split(entries, split_ratio, rng)
    return CorpusIndex(tr_i, te_i, tr_a, te_a, seed)


def load_image(path: str | Path, size: int) -> np.ndarray:
    """RGB image resized (bilinear) to size x size, float32 in [0, 1], HWC."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


@dataclass
class PairSource:
    """Draws (image, secret) pairs from an index under one configuration."""

    index: CorpusIndex
    duration_range: tuple[float, float]
    size: int = packer.IMAGE_SIZE
    fmt: Format = Format.MEL
    ref: float = audio.DEFAULT_REF
    stft_scale: float = packer.DEFAULT_STFT_SCALE
    split: str = "train"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.fmt = Format(self.fmt)
        if not self.index.images(self.split) or not self.index.audio(self.split):
            raise InputError(f"split {self.split!r} is empty")

    @property
    def channels(self) -> int:
        return packer.channels_for(self.duration_range[1], self.fmt, self.size, self.size)

    def clip(self, i: int) -> Waveform:
        entries = self.index.audio(self.split)
        entry = entries[i % len(entries)]
        if entry.path not in self._cache:
            self._cache[entry.path] = audio.load_wav(entry.path)
        return self._cache[entry.path]

    def image(self, i: int) -> np.ndarray:
        paths = self.index.images(self.split)
        return load_image(paths[i % len(paths)], self.size)

    def secret(self, wave: Waveform, duration: float) -> PackedSecret:
        """Crop or zero-pad ``wave`` to ``duration`` and pack at the range's channel count."""
        c = self.channels
        n = packer.n_samples_for(duration) if duration > 0 else 0
        clip = audio.fit_length(wave, n)
        if clip is None or n < audio.HOP:
            return PackedSecret(np.zeros((self.size, self.size, c)), self.fmt, c * self.size**2,
                                {"source_len": 0, "n_frames": 0})
        return packer.pack(clip, self.fmt, self.size, self.size, channels=c, ref=self.ref,
                           stft_scale=self.stft_scale)

    def draw_duration(self, rng: np.random.Generator) -> float:
        lo, hi = self.duration_range
        return float(rng.uniform(lo, hi))


def make_pair(source: PairSource, item: int, rng: np.random.Generator) -> tuple[np.ndarray, PackedSecret]:
    duration = source.draw_duration(rng)
    return source.image(item), source.secret(source.clip(item), duration)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def iter_batches(source: PairSource, batch_size: int, seed: int, epoch: int, n_audio_covers: int = 0):
    """Yield NCHW float32 batches ``(images, secrets, audio_covers)`` for one epoch.

    Pair order and drawn durations depend only on (seed, epoch). With
    ``n_audio_covers`` > 0, extra clips (offset through the index) are
    packed as covers for the nested layers.
    """
    rng = epoch_rng(seed, epoch)
    n = source.index.size(source.split)
    order = rng.permutation(n)
    # cover clips for the nested layers come from evenly spaced offsets
    stride = max(len(source.index.audio(source.split)) // (n_audio_covers + 1), 1)
    for start in range(0, n, batch_size):
        imgs, secrets, covers = [], [], [[] for _ in range(n_audio_covers)]
        for item in map(int, order[start:start + batch_size]):
            img, sec = make_pair(source, item, rng)
            imgs.append(img)
            secrets.append(sec.tensor)
            for j in range(n_audio_covers):
                clip = source.clip(item + (j + 1) * stride)
                covers[j].append(source.secret(clip, source.draw_duration(rng)).tensor)
        yield _nchw(imgs), _nchw(secrets), [_nchw(c) for c in covers]


def _nchw(arrays) -> torch.Tensor:
    return torch.from_numpy(np.stack(arrays).astype(np.float32)).permute(0, 3, 1, 2).contiguous()


def splice_clips(index: CorpusIndex, target_duration: float, split: str = "train", start: int = 0) -> Waveform:
    """Concatenate consecutive clips until ``target_duration`` is reached, then crop."""
    need = packer.n_samples_for(target_duration)
    entries = index.audio(split)
    total = sum(round(e.duration * audio.SAMPLE_RATE) for e in entries)
    if need > total:
        raise InputError(f"need {target_duration} s of audio, corpus split has {total / audio.SAMPLE_RATE:.2f} s")
    parts, have = [], 0
    i = start
    while have < need:
        x = audio.load_wav(entries[i % len(entries)].path).samples
        parts.append(x)
        have += x.size
        i += 1
    return Waveform(np.concatenate(parts)[:need])
