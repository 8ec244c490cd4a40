"""Losses, optimisation steps and run configuration."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
import torch.nn.functional as F

from .errors import ConfigError, InputError, TrainingError
from .inn import INNStack
from .nested import MAX_DEPTH, NestedStack
from .packer import Format

ENV_PREFIX = "AUDIOSTEGO_"


@dataclass(frozen=True)
class LossWeights:
    container: float = 32.0
    cover: float = 1.0
    secret: float = 32.0

    def __post_init__(self):
        if min(self.container, self.cover, self.secret) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 2e-4
    batch_size: int = 8
    seed: int = 0
    image_size: int = 160
    duration_range_s: tuple[float, float] = (0.0, 10.0)
    format: str = "mel"
    quantize_container: bool = False
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    depth: int = 1
    lambda_c: float = 32.0
    lambda_i: float = 1.0
    lambda_a: float = 32.0

    def __post_init__(self):
        self.duration_range_s = tuple(float(v) for v in self.duration_range_s)
        self.betas = tuple(float(v) for v in self.betas)
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        lo, hi = self.duration_range_s
        if not (0 <= lo <= hi and hi > 0):
            raise ConfigError(f"duration_range_s must satisfy 0 <= lo <= hi, hi > 0; got {self.duration_range_s}")
        if self.format not in {f.value for f in Format}:
            raise ConfigError(f"unknown format {self.format!r}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ConfigError(f"depth must be in [1, {MAX_DEPTH}]")
        LossWeights(self.lambda_c, self.lambda_i, self.lambda_a)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_c, self.lambda_i, self.lambda_a)

    @property
    def max_duration(self) -> float:
        return self.duration_range_s[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration_range_s"] = list(self.duration_range_s)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict, require_all: bool = True) -> "TrainConfig":
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        if require_all:
            missing = [n for n in names if n not in data]
            if missing:
                raise ConfigError(f"missing config key(s): {', '.join(missing)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path, environ: dict | None = None) -> "TrainConfig":
        """Read a flat JSON object; ``AUDIOSTEGO_<KEY>`` env vars override keys."""
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat key-value object")
        environ = os.environ if environ is None else environ
        for f in fields(cls):
            raw = environ.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                try:
                    data[f.name] = json.loads(raw)
                except json.JSONDecodeError:
                    data[f.name] = raw
        return cls.from_dict(data)


@dataclass
class LossReport:
    total: torch.Tensor
    container: torch.Tensor
    cover: torch.Tensor
    secret: torch.Tensor
    layers: list["LossReport"] = field(default_factory=list)

    def as_floats(self) -> dict:
        return {"total": self.total.item(), "container": self.container.item(),
                "cover": self.cover.item(), "secret": self.secret.item()}


def loss_total(container, cover, revealed_cover, revealed_secret, secret,
               w: LossWeights = LossWeights()) -> LossReport:
    """Weighted sum of container, cover-recovery and secret-recovery MSEs."""
    if container.shape != cover.shape or revealed_cover.shape != cover.shape:
        raise InputError(f"image shapes disagree: {tuple(container.shape)}, {tuple(cover.shape)}, "
                         f"{tuple(revealed_cover.shape)}")
    if revealed_secret.shape != secret.shape:
        raise InputError(f"secret shapes disagree: {tuple(revealed_secret.shape)} vs {tuple(secret.shape)}")
    l_c = F.mse_loss(container, cover)
    l_i = F.mse_loss(revealed_cover, cover)
    l_a = F.mse_loss(revealed_secret, secret)
    total = w.container * l_c + w.cover * l_i + w.secret * l_a
    return LossReport(total, l_c, l_i, l_a)


def quantize_ste(x: torch.Tensor) -> torch.Tensor:
    """8-bit quantise-dequantise with a pass-through gradient."""
    q = torch.round(x.clamp(0.0, 1.0) * 255.0) / 255.0
    return x + (q - x).detach()


def make_optimizer(params, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(params, lr=config.learning_rate, betas=config.betas, eps=config.eps)


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _check_finite(report: LossReport, step: int | None = None):
    if not math.isfinite(report.total.item()):
        parts = {k: v for k, v in report.as_floats().items()}
        raise TrainingError(f"non-finite loss at step {step}: {parts}")


def stack_losses(stack: INNStack, covers, secrets, config: TrainConfig) -> LossReport:
    container, _ = stack.embed(covers, secrets)
    if config.quantize_container:
        container = quantize_ste(container)
    revealed_secret, revealed_cover = stack.reveal_deployed(container)
    return loss_total(container, covers, revealed_cover, revealed_secret, secrets, config.weights)


def train_step(stack: INNStack, optimizer: torch.optim.Optimizer, covers: torch.Tensor,
               secrets: torch.Tensor, config: TrainConfig, step: int | None = None) -> LossReport:
    """One embed -> reveal -> loss -> update cycle on a batch."""
    stack.train()
    optimizer.zero_grad(set_to_none=True)
    report = stack_losses(stack, covers, secrets, config)
    _check_finite(report, step)
    report.total.backward()
    optimizer.step()
    return _detached(report)


def nested_losses(nested: NestedStack, images, audio_covers: list, secrets, config: TrainConfig) -> LossReport:
    """Per-layer losses along the deployed decode path, summed with equal weight."""
    if len(audio_covers) != nested.depth - 1:
        raise InputError(f"depth {nested.depth} needs {nested.depth - 1} audio covers")
    # per-layer (cover, container, hidden payload), deepest layer first
    payloads = {}
    payload = secrets
    for k in range(nested.depth, 0, -1):
        cover = images if k == 1 else audio_covers[k - 2]
        out, _ = nested.layer(k).embed(cover, payload)
        payloads[k] = (cover, out, payload)
        payload = out
    image_container = payload
    if config.quantize_container:
        image_container = quantize_ste(image_container)
        cover, _, hidden = payloads[1]
        payloads[1] = (cover, image_container, hidden)
    layers = []
    current = image_container
    for k in range(1, nested.depth + 1):
        cover, out, hidden = payloads[k]
        revealed_secret, revealed_cover = nested.layer(k).reveal_deployed(current)
        layers.append(loss_total(out, cover, revealed_cover, revealed_secret, hidden, config.weights))
        current = revealed_secret
    total = sum(r.total for r in layers)
    return LossReport(total, sum(r.container for r in layers), sum(r.cover for r in layers),
                      sum(r.secret for r in layers), layers)


def train_nested_step(nested: NestedStack, optimizer: torch.optim.Optimizer, images, audio_covers: list,
                      secrets, config: TrainConfig, step: int | None = None) -> LossReport:
    nested.train()
    optimizer.zero_grad(set_to_none=True)
    report = nested_losses(nested, images, audio_covers, secrets, config)
    _check_finite(report, step)
    report.total.backward()
    optimizer.step()
    return _detached(report)


def _detached(r: LossReport) -> LossReport:
    return LossReport(r.total.detach(), r.container.detach(), r.cover.detach(), r.secret.detach(),
                      [_detached(x) for x in r.layers])
