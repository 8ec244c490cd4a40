import math

import numpy as np
import pytest
import torch

from audiostego.errors import InputError
from audiostego.inn import (CouplingBlock, INNStack, build_stack, es_gate, hwc_to_nchw, init_weights,
                            nchw_to_hwc, randomize_weights)


def _pair(seed, c, size=16, dtype=torch.float32, n=1):
    g = torch.Generator().manual_seed(seed)
    cover = torch.rand((n, 3, size, size), generator=g, dtype=torch.float64).to(dtype)
    secret = torch.rand((n, c, size, size), generator=g, dtype=torch.float64).to(dtype)
    return cover, secret


def test_es_gate_values():
    x = torch.tensor([0.0, 50.0, -50.0], dtype=torch.float64)
    g = es_gate(x)
    assert g[0].item() == pytest.approx(math.exp(0.5), rel=1e-15)
    assert g[1].item() == pytest.approx(math.e, rel=1e-12)
    assert g[2].item() == pytest.approx(1.0, rel=1e-12)


def test_es_gate_bounds():
    g = es_gate(torch.linspace(-30, 30, 1001, dtype=torch.float64))
    assert g.min() >= 1.0 and g.max() <= math.e


def test_es_gate_gradient_matches_finite_difference():
    x = torch.linspace(-3, 3, 13, dtype=torch.float64, requires_grad=True)
    es_gate(x).sum().backward()
    h = 1e-6
    with torch.no_grad():
        fd = (es_gate(x + h) - es_gate(x - h)) / (2 * h)
    torch.testing.assert_close(x.grad, fd, rtol=1e-7, atol=1e-9)


def test_identity_at_init():
    stack = build_stack(3, 2, seed=0)
    cover, secret = _pair(0, 2)
    with torch.no_grad():
        container, latent = stack.embed(cover, secret)
    assert torch.equal(container, cover)
    # each block scales the secret by exp(sigmoid(0)) = e^0.5
    torch.testing.assert_close(latent, secret * math.exp(0.5) ** 8, rtol=1e-6, atol=0)


def test_zero_weights_reveal_divides_by_e4():
    stack = build_stack(3, 2, seed=0, dtype=torch.float64)
    cover, latent = _pair(1, 2, dtype=torch.float64)
    with torch.no_grad():
        secret, cov = stack.reveal(cover, latent)
    torch.testing.assert_close(secret, latent * math.exp(-4), rtol=1e-12, atol=0)
    assert torch.equal(cov, cover)


def test_deployed_reveal_of_clean_cover_at_init_is_zero():
    stack = build_stack(3, 4, seed=3)
    cover, _ = _pair(2, 4)
    with torch.no_grad():
        secret, cov = stack.reveal_deployed(cover)
    assert not secret.any()
    assert torch.equal(cov, cover)


@pytest.mark.parametrize("c", [1, 2, 4])
@pytest.mark.parametrize("dtype, tol", [(torch.float32, 1e-3), (torch.float64, 1e-9)])
def test_invertibility_random_weights(c, dtype, tol):
    for seed in range(5):
        stack = randomize_weights(INNStack(3, c).to(dtype), seed, std=0.1)
        cover, secret = _pair(seed, c, size=32, dtype=dtype)
        with torch.no_grad():
            container, latent = stack.embed(cover, secret)
            s2, c2 = stack.reveal(container, latent)
        assert (s2 - secret).abs().max() < tol
        assert (c2 - cover).abs().max() < tol
        assert not torch.equal(container, cover)


def test_inverse_block_composes():
    torch.manual_seed(0)
    block = CouplingBlock(3, 2).double()
    for p in block.parameters():
        torch.nn.init.normal_(p, std=0.2)
    a, b = _pair(9, 2, dtype=torch.float64)
    with torch.no_grad():
        fa, fb = block(a, b)
        ia, ib = block.inverse(fa, fb)
        # and the other direction: forward(inverse(x)) == x
        ja, jb = block(*block.inverse(a, b))
    torch.testing.assert_close(ia, a, rtol=0, atol=1e-12)
    torch.testing.assert_close(ib, b, rtol=0, atol=1e-12)
    torch.testing.assert_close(ja, a, rtol=0, atol=1e-12)
    torch.testing.assert_close(jb, b, rtol=0, atol=1e-12)


def test_gradcheck_coupling_block():
    block = CouplingBlock(3, 2, hidden=4).double()
    for p in block.parameters():
        torch.nn.init.normal_(p, std=0.3)
    a, b = _pair(4, 2, size=4, dtype=torch.float64)
    a.requires_grad_(True)
    b.requires_grad_(True)
    assert torch.autograd.gradcheck(lambda x, y: block(x, y), (a, b), eps=1e-6, atol=1e-7, rtol=1e-3)


def test_init_is_deterministic_per_seed():
    a = build_stack(3, 2, seed=7)
    b = build_stack(3, 2, seed=7)
    c = build_stack(3, 2, seed=8)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)


def test_init_layout():
    stack = init_weights(INNStack(3, 2), seed=0)
    first, _, last = stack.blocks[0].e1.body
    assert not last.weight.any() and not last.bias.any()
    assert not first.bias.any()
    assert 0.015 < first.weight.std().item() < 0.025


def test_reveal_is_deterministic():
    stack = randomize_weights(INNStack(3, 2), 1, std=0.05)
    cover, _ = _pair(0, 2)
    with torch.no_grad():
        a = stack.reveal_deployed(cover)
        b = stack.reveal_deployed(cover)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


@pytest.mark.parametrize("cover_shape, secret_shape", [
    ((1, 3, 16, 16), (1, 3, 16, 16)),
    ((1, 1, 16, 16), (1, 2, 16, 16)),
    ((1, 3, 16, 16), (1, 2, 8, 8)),
    ((2, 3, 16, 16), (1, 2, 16, 16)),
    ((3, 16, 16), (2, 16, 16)),
])
def test_shape_mismatch(cover_shape, secret_shape):
    stack = INNStack(3, 2)
    with pytest.raises(InputError):
        stack.embed(torch.zeros(cover_shape), torch.zeros(secret_shape))


def test_layout_helpers_round_trip():
    x = np.random.default_rng(0).random((8, 6, 5)).astype(np.float32)
    t = hwc_to_nchw(x)
    assert t.shape == (1, 5, 8, 6)
    np.testing.assert_array_equal(nchw_to_hwc(t)[0], x)
