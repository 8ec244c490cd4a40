"""End-to-end hide/recover on images and waveforms, backed by a checkpoint."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, PngImagePlugin, UnidentifiedImageError

from . import audio, checkpoint, packer
from .audio import Waveform
from .errors import CapacityError, ConfigError, InputError, PermissionDenied
from .inn import INNStack, hwc_to_nchw, nchw_to_hwc
from .nested import NestedStack
from .packer import Format, PackedSecret
from .trainer import TrainConfig

PNG_KEY = "audiostego"

log = logging.getLogger(__name__)


@dataclass
class Model:
    """Trained layers plus everything needed to pack and unpack secrets."""

    layers: dict[int, INNStack]
    config: TrainConfig
    ref: float = audio.DEFAULT_REF
    stft_scale: float = packer.DEFAULT_STFT_SCALE
    extra: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.config.image_size

    @property
    def format(self) -> Format:
        return Format(self.config.format)

    @property
    def channels(self) -> int:
        return packer.channels_for(self.config.max_duration, self.format, self.size, self.size)

    @property
    def depth(self) -> int:
        return self.config.depth

    def nested(self) -> NestedStack:
        return NestedStack(self.layers, self.depth)

    def meta(self) -> dict:
        return {"config": self.config.to_dict(), "ref": self.ref, "stft_scale": self.stft_scale, **self.extra}

    def save(self, path: str | Path, layers: list[int] | None = None) -> None:
        keep = {k: s for k, s in self.layers.items() if layers is None or k in layers}
        checkpoint.save(path, checkpoint.pack_layers(keep, self.meta()))

    @classmethod
    def load(cls, *paths: str | Path) -> "Model":
        """Merge one or more checkpoint files (e.g. one per nested layer)."""
        if not paths:
            raise ConfigError("no checkpoint given")
        layers: dict[int, INNStack] = {}
        model = None
        for path in paths:
            ckpt = checkpoint.load(path)
            meta = ckpt.meta
            try:
                config = TrainConfig.from_dict(meta["config"])
            except KeyError:
                raise ConfigError(f"{path} carries no configuration") from None
            if model is None:
                model = cls({}, config, meta.get("ref", audio.DEFAULT_REF),
                            meta.get("stft_scale", packer.DEFAULT_STFT_SCALE))
            elif config.to_dict() != model.config.to_dict():
                raise ConfigError(f"{path} was trained with a different configuration")
            for k, stack in checkpoint.unpack_layers(ckpt).items():
                stack.eval()
                layers[k] = stack
        model.layers = layers
        return model

    # -- packing -------------------------------------------------------------

    def check_capacity(self, wave: Waveform) -> None:
        limit = self.config.max_duration
        if wave.duration > limit + 1e-9:
            raise CapacityError(f"audio is {wave.duration:.2f} s but this checkpoint holds at most {limit:g} s")

    def pack(self, wave: Waveform) -> PackedSecret:
        self.check_capacity(wave)
        return packer.pack(wave, self.format, self.size, self.size, channels=self.channels, ref=self.ref,
                           stft_scale=self.stft_scale)

    def unpack(self, tensor_hwc: np.ndarray, source_len: int, decompressor: str = "griffin-lim") -> Waveform:
        """Rebuild audio of ``source_len`` samples from a revealed [h, w, c] tensor."""
        meta = self.secret_meta(source_len)
        p = PackedSecret(np.clip(tensor_hwc.astype(np.float64), 0.0, 1.0), self.format, 0, meta)
        return packer.unpack(p, decompressor)

    def secret_meta(self, source_len: int) -> dict:
        if self.format is Format.MEL:
            return {"n_frames": audio.content_frames(source_len), "source_len": source_len, "ref": self.ref,
                    "floor_db": audio.FLOOR_DB}
        if self.format is Format.STFT:
            return {"n_frames": -(-source_len // packer.STFT_HOP), "source_len": source_len,
                    "scale": self.stft_scale}
        return {"source_len": source_len}

    # -- single layer ----------------------------------------------------------

    def layer(self, k: int) -> INNStack:
        try:
            return self.layers[k]
        except KeyError:
            raise PermissionDenied(f"checkpoint for layer {k} not provided") from None

    def _dtype(self):
        return next(self.layer(1).parameters()).dtype

    @torch.no_grad()
    def embed(self, image: np.ndarray, wave: Waveform) -> np.ndarray:
        """Hide ``wave`` in an HWC image; returns the unclamped float container."""
        self._check_image(image)
        secret = self.pack(wave)
        stack = self.layer(1)
        container, _ = stack.embed(hwc_to_nchw(image, self._dtype()), hwc_to_nchw(secret.tensor, self._dtype()))
        return nchw_to_hwc(container)[0]

    @torch.no_grad()
    def reveal_tensor(self, container: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self._check_image(container)
        secret, cover = self.layer(1).reveal_deployed(hwc_to_nchw(container, self._dtype()))
        return nchw_to_hwc(secret)[0], nchw_to_hwc(cover)[0]

    def reveal(self, container: np.ndarray, source_len: int, decompressor: str = "griffin-lim") -> Waveform:
        secret, _ = self.reveal_tensor(container)
        return self.unpack(secret, source_len, decompressor)

    def _check_image(self, image: np.ndarray) -> None:
        if image.shape != (self.size, self.size, self.layer(1).cover_channels):
            raise InputError(f"image must be {self.size}x{self.size}x{self.layer(1).cover_channels}, "
                             f"got {'x'.join(map(str, image.shape))}")

    # -- nested ----------------------------------------------------------------

    @torch.no_grad()
    def nested_embed(self, image: np.ndarray, waves: list[Waveform]) -> np.ndarray:
        """``waves[k-1]`` is the audio shipped at access level k."""
        if len(waves) != self.depth:
            raise InputError(f"depth {self.depth} needs {self.depth} audio clips, got {len(waves)}")
        self._check_image(image)
        dt = self._dtype()
        tensors = [hwc_to_nchw(self.pack(w).tensor, dt) for w in waves]
        container = self.nested().encode(hwc_to_nchw(image, dt), tensors[:-1], tensors[-1])
        return nchw_to_hwc(container)[0]

    @torch.no_grad()
    def nested_reveal(self, container: np.ndarray, level: int, source_lens: list[int],
                      decompressor: str = "griffin-lim") -> list[Waveform]:
        if not 1 <= level <= self.depth:
            raise InputError(f"level must be in [1, {self.depth}]")
        for k in range(1, level + 1):
            self.layer(k)
        self._check_image(container)
        nested = NestedStack({k: s for k, s in self.layers.items() if k <= level}, self.depth)
        pairs = nested.decode(hwc_to_nchw(container, self._dtype()), level)
        return [self.unpack(nchw_to_hwc(secret)[0], source_lens[k], decompressor)
                for k, (secret, _) in enumerate(pairs)]


def to_uint8(container: np.ndarray) -> np.ndarray:
    return np.round(np.clip(container, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: str | Path, container: np.ndarray, meta: dict | None = None) -> None:
    info = PngImagePlugin.PngInfo()
    if meta is not None:
        info.add_text(PNG_KEY, json.dumps(meta, sort_keys=True))
    Image.fromarray(to_uint8(container), "RGB").save(path, format="PNG", pnginfo=info)


def read_png(path: str | Path) -> tuple[np.ndarray, dict | None]:
    """Container pixels in [0, 1] (HWC float32) and the embedded metadata, if any."""
    try:
        with Image.open(path) as im:
            text = getattr(im, "text", {}) or {}
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot read container {path}: {exc}") from exc
    meta = None
    if PNG_KEY in text:
        try:
            meta = json.loads(text[PNG_KEY])
        except json.JSONDecodeError:
            meta = None
    return arr, meta


def build_model(config: TrainConfig, ref: float = audio.DEFAULT_REF,
                stft_scale: float = packer.DEFAULT_STFT_SCALE, dtype=torch.float32) -> Model:
    """Fresh identity-at-init model for ``config``."""
    c = packer.channels_for(config.max_duration, config.format, config.image_size, config.image_size)
    nested = NestedStack.build(config.depth, c, seed=config.seed, dtype=dtype)
    layers = {k: nested.layer(k) for k in range(1, config.depth + 1)}
    return Model(layers, config, ref, stft_scale)


def train_model(config: TrainConfig, index, log_every=None, ref: float | None = None,
                max_steps: int | None = None) -> tuple[Model, list[dict]]:
    """Train a (possibly nested) model on ``index``'s training split.

    Returns the model and one loss row per optimisation step.
    """
    from .datasets import PairSource, iter_batches
    from .trainer import make_optimizer, seed_everything, train_nested_step, train_step

    seed_everything(config.seed)
    if ref is None:
        probe = PairSource(index, config.duration_range_s, config.image_size, config.format)
        ref = audio.estimate_reference(probe.clip(i) for i in range(len(index.audio("train"))))
    model = build_model(config, ref=ref)
    source = PairSource(index, config.duration_range_s, config.image_size, config.format, ref=ref,
                        stft_scale=model.stft_scale)
    nested = model.nested()
    optimizer = make_optimizer(nested.parameters(), config)
    history = []
    for epoch in range(config.epochs):
        for images, secrets, covers in iter_batches(source, config.batch_size, config.seed, epoch,
                                                    n_audio_covers=config.depth - 1):
            step = len(history) + 1
            if config.depth == 1:
                report = train_step(model.layers[1], optimizer, images, secrets, config, step)
            else:
                report = train_nested_step(nested, optimizer, images, covers, secrets, config, step)
            history.append({"epoch": epoch, "step": step, **report.as_floats()})
            if log_every and step % log_every == 0:
                log.info("step %d: total %.5f", step, history[-1]["total"])
            if max_steps is not None and step >= max_steps:
                break
        if max_steps is not None and len(history) >= max_steps:
            break
    for s in model.layers.values():
        s.eval()
    return model, history
