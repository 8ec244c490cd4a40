"""Cascaded hiding: audio inside audio inside an image.

Layer 1 hides a secret in the image. Every deeper layer k hides its secret
inside an audio cover, and its container becomes layer k-1's secret. A
holder of layers 1..k can peel the image back to depth k and no further.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import InputError, PermissionDenied
from .inn import HIDDEN, N_BLOCKS, INNStack, init_weights

MAX_DEPTH = 4


@dataclass(frozen=True)
class AccessLevel:
    level: int

    def __post_init__(self):
        if self.level < 1:
            raise InputError(f"access level must be >= 1, got {self.level}")


class NestedStack(nn.Module):
    """Layers keyed 1..N. Missing deeper layers model a partial grant."""

    def __init__(self, layers: dict[int, INNStack] | list[INNStack], depth: int | None = None):
        super().__init__()
        if isinstance(layers, list):
            layers = {i + 1: s for i, s in enumerate(layers)}
        self.depth = depth if depth is not None else max(layers)
        if not 1 <= self.depth <= MAX_DEPTH:
            raise InputError(f"depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        c = None
        for k, s in layers.items():
            if not 1 <= k <= self.depth:
                raise InputError(f"layer index {k} outside 1..{self.depth}")
            if k >= 2 and s.cover_channels != s.secret_channels:
                raise InputError(f"layer {k} must map c -> c channels")
            if c is not None and s.secret_channels != c:
                raise InputError("all layers must share one secret channel count")
            c = s.secret_channels
        self.channels = c
        self.layers = nn.ModuleDict({str(k): s for k, s in sorted(layers.items())})

    @classmethod
    def build(cls, depth: int, channels: int, image_channels: int = 3, seed: int = 0,
              n_blocks: int = N_BLOCKS, hidden: int = HIDDEN, dtype=torch.float32) -> "NestedStack":
        layers = {}
        for k in range(1, depth + 1):
            cover = image_channels if k == 1 else channels
            layers[k] = init_weights(INNStack(cover, channels, n_blocks, hidden).to(dtype), seed + k - 1)
        return cls(layers, depth)

    def layer(self, k: int) -> INNStack:
        try:
            return self.layers[str(k)]
        except KeyError:
            raise PermissionDenied(f"no weights for layer {k}") from None

    def available(self) -> list[int]:
        return sorted(int(k) for k in self.layers)

    def encode(self, image: torch.Tensor, audio_covers: list[torch.Tensor], secret: torch.Tensor,
               return_latents: bool = False):
        """Hide ``secret`` through every layer. ``audio_covers[j]`` is layer j+2's cover.

        Returns the image container, and with ``return_latents`` also the
        per-layer latents (index 0 = layer 1) needed for an exact decode.
        """
        if len(audio_covers) != self.depth - 1:
            raise InputError(f"depth {self.depth} needs {self.depth - 1} audio covers, got {len(audio_covers)}")
        latents = {}
        payload = secret
        for k in range(self.depth, 0, -1):
            cover = image if k == 1 else audio_covers[k - 2]
            stack = self.layer(k)
            if payload.shape[1] != stack.secret_channels or (k > 1 and cover.shape[1] != stack.cover_channels):
                raise InputError(f"layer {k} expects {stack.secret_channels} channels")
            payload, latents[k] = stack.embed(cover, payload)
        if return_latents:
            return payload, [latents[k] for k in range(1, self.depth + 1)]
        return payload

    def decode(self, container: torch.Tensor, level: AccessLevel | int,
               latents: list[torch.Tensor] | None = None) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """(secret_est, cover_est) for layers 1..level, reading no deeper layer.

        Deployed decoding seeds every latent with zeros; pass the forward
        ``latents`` to get the exact inverse instead.
        """
        level = level.level if isinstance(level, AccessLevel) else int(level)
        if level > self.depth:
            raise InputError(f"level {level} exceeds depth {self.depth}")
        out = []
        current = container
        for k in range(1, level + 1):
            stack = self.layer(k)
            if latents is None:
                secret, cover = stack.reveal_deployed(current)
            else:
                secret, cover = stack.reveal(current, latents[k - 1])
            out.append((secret, cover))
            current = secret
        return out
