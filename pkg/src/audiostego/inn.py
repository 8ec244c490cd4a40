"""Invertible coupling network that hides a secret tensor inside a cover.

Each block updates the cover branch additively from the secret, then the
secret branch affinely from the new cover::

    cover'  = cover + E1(secret)
    secret' = secret * ES(E3(cover')) + E2(cover')

with ``ES(x) = exp(sigmoid(x))``. The inverse runs the blocks in reverse
order. Tensors are NCHW throughout.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import InputError

N_BLOCKS = 8
HIDDEN = 32


def es_gate(x: torch.Tensor) -> torch.Tensor:
    """exp(sigmoid(x)); strictly inside (1, e) for finite x."""
    return torch.exp(torch.sigmoid(x))


class Subnet(nn.Module):
    """conv3x3 -> LeakyReLU(0.2) -> conv3x3, spatial size preserved."""

    def __init__(self, in_channels: int, out_channels: int, hidden: int = HIDDEN):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, out_channels, 3, padding=1),
        )

    def forward(self, x):
        return self.body(x)


class CouplingBlock(nn.Module):
    def __init__(self, cover_channels: int, secret_channels: int, hidden: int = HIDDEN):
        super().__init__()
        self.e1 = Subnet(secret_channels, cover_channels, hidden)
        self.e2 = Subnet(cover_channels, secret_channels, hidden)
        self.e3 = Subnet(cover_channels, secret_channels, hidden)

    def forward(self, cover, secret):
        cover = cover + self.e1(secret)
        secret = secret * es_gate(self.e3(cover)) + self.e2(cover)
        return cover, secret

    def inverse(self, cover, secret):
        secret = (secret - self.e2(cover)) / es_gate(self.e3(cover))
        cover = cover - self.e1(secret)
        return cover, secret


class INNStack(nn.Module):
    """Ordered coupling blocks sharing one (cover, secret) channel layout."""

    def __init__(self, cover_channels: int = 3, secret_channels: int = 2, n_blocks: int = N_BLOCKS,
                 hidden: int = HIDDEN):
        super().__init__()
        self.cover_channels = cover_channels
        self.secret_channels = secret_channels
        self.hidden = hidden
        self.blocks = nn.ModuleList(
            CouplingBlock(cover_channels, secret_channels, hidden) for _ in range(n_blocks))

    def _check(self, cover, secret=None):
        if cover.ndim != 4 or cover.shape[1] != self.cover_channels:
            raise InputError(f"cover must be [N, {self.cover_channels}, H, W], got {tuple(cover.shape)}")
        if secret is not None:
            if secret.ndim != 4 or secret.shape[1] != self.secret_channels:
                raise InputError(
                    f"secret must be [N, {self.secret_channels}, H, W], got {tuple(secret.shape)}")
            if secret.shape[0] != cover.shape[0] or secret.shape[2:] != cover.shape[2:]:
                raise InputError(f"cover {tuple(cover.shape)} and secret {tuple(secret.shape)} disagree")

    def embed(self, cover: torch.Tensor, secret: torch.Tensor):
        """Forward pass. Returns (container, latent)."""
        self._check(cover, secret)
        for block in self.blocks:
            cover, secret = block(cover, secret)
        return cover, secret

    def reveal(self, container: torch.Tensor, latent: torch.Tensor):
        """Exact inverse of :meth:`embed`. Returns (secret, cover)."""
        self._check(container, latent)
        cover, secret = container, latent
        for block in reversed(self.blocks):
            cover, secret = block.inverse(cover, secret)
        return secret, cover

    def reveal_deployed(self, container: torch.Tensor):
        """Reveal from the container alone, seeding the latent with zeros."""
        self._check(container)
        n, _, h, w = container.shape
        seed = container.new_zeros((n, self.secret_channels, h, w))
        return self.reveal(container, seed)

    def forward(self, cover, secret):
        return self.embed(cover, secret)


def init_weights(stack: INNStack, seed: int = 0, std: float = 0.02) -> INNStack:
    """Seeded init: hidden convs ~ N(0, std), every sub-network's last conv zeroed.

    Zeroed output layers make the stack the identity on the cover branch.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in stack.modules():
            if isinstance(module, Subnet):
                first, _, last = module.body
                first.weight.copy_(torch.randn(first.weight.shape, generator=gen, dtype=first.weight.dtype) * std)
                first.bias.zero_()
                last.weight.zero_()
                last.bias.zero_()
    return stack


def randomize_weights(stack: INNStack, seed: int = 0, std: float = 0.02) -> INNStack:
    """Fill every parameter with N(0, std) noise (test helper for non-trivial maps)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in stack.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
    return stack


def build_stack(cover_channels: int, secret_channels: int, seed: int = 0, n_blocks: int = N_BLOCKS,
                hidden: int = HIDDEN, dtype=torch.float32) -> INNStack:
    stack = INNStack(cover_channels, secret_channels, n_blocks, hidden).to(dtype)
    return init_weights(stack, seed)


def hwc_to_nchw(x, dtype=torch.float32) -> torch.Tensor:
    t = torch.as_tensor(x)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).to(dtype).contiguous()


def nchw_to_hwc(t: torch.Tensor):
    return t.detach().permute(0, 2, 3, 1).cpu().numpy()
