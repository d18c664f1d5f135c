"""Residual generators and PatchGAN discriminators.

Both generators follow the nine-block residual design: a 7x7 stem, two
stride-2 downsamples, residual blocks, two stride-2 deconvolutions and a
7x7 head that predicts a bounded 3-channel residual added to the input.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np
import torch
import torch.nn as nn

INIT_STD = 0.02
NORM_EPS = 1e-5


def _norm(ch: int) -> nn.InstanceNorm2d:
    return nn.InstanceNorm2d(ch, eps=NORM_EPS, affine=False)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Residual image-to-image generator.

    ``in_channels`` is 3 for the shadow remover and 4 for the mask-guided
    shadow synthesizer (image + mask channel). Only the first three input
    channels receive the predicted residual.
    """

    def __init__(self, in_channels: int = 3, n_blocks: int = 9, width: int = 64):
        super().__init__()
        self.in_channels = in_channels
        self.n_blocks = n_blocks
        self.width = width
        w = width
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(in_channels, w, 7), _norm(w), nn.ReLU(inplace=True)]
        for mult in (1, 2):
            layers += [
                nn.ReflectionPad2d(1), nn.Conv2d(w * mult, w * mult * 2, 3, stride=2),
                _norm(w * mult * 2), nn.ReLU(inplace=True),
            ]
        layers += [ResidualBlock(4 * w) for _ in range(n_blocks)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(w * mult, w * mult // 2, 3, stride=2, padding=1, output_padding=1),
                _norm(w * mult // 2), nn.ReLU(inplace=True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(w, 3, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_spatial(x)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"generator expects {self.in_channels} channels, got {x.shape[1]}")
        return torch.clamp(x[:, :3] + self.model(x), -1.0, 1.0)


class Discriminator(nn.Module):
    """70x70 PatchGAN: returns a grid of raw patch scores.

    ``norm=False`` drops instance normalization; normalization statistics
    span the whole image, so only the unnormalized stack has strictly local
    scores.
    """

    def __init__(self, in_channels: int = 3, width: int = 64, norm: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.width = width
        self.norm = norm
        w = width
        plan = [(in_channels, w, 2, False), (w, 2 * w, 2, True), (2 * w, 4 * w, 2, True), (4 * w, 8 * w, 1, True)]
        layers: list[nn.Module] = []
        for cin, cout, stride, use_norm in plan:
            layers.append(nn.Conv2d(cin, cout, 4, stride=stride, padding=1))
            if use_norm and norm:
                layers.append(_norm(cout))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
        layers.append(nn.Conv2d(8 * w, 1, 4, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_spatial(x)
        return self.model(x)


def receptive_field(net: Discriminator) -> int:
    rf, jump = 1, 1
    for m in net.model:
        if isinstance(m, nn.Conv2d):
            rf += (m.kernel_size[0] - 1) * jump
            jump *= m.stride[0]
    return rf


def check_spatial(x: torch.Tensor) -> None:
    if x.ndim != 4:
        raise ValueError(f"expected an (N, C, H, W) tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise ValueError(f"spatial size {h}x{w} must be divisible by 4")


def init_params(net: nn.Module, rng: torch.Generator | int) -> nn.Module:
    """Draw every conv weight from N(0, 0.02^2) and zero every bias, in module order."""
    if isinstance(rng, int):
        rng = torch.Generator().manual_seed(rng)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                w = torch.randn(m.weight.shape, generator=rng, dtype=torch.float64) * INIT_STD
                m.weight.copy_(w.to(m.weight.dtype))
                if m.bias is not None:
                    m.bias.zero_()
    return net


def zero_params(net: nn.Module) -> nn.Module:
    """All-zero weights: generators become the identity map."""
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def mask_channel(mask: torch.Tensor) -> torch.Tensor:
    """Encode a {0, 1} mask of shape (N, H, W) or (N, 1, H, W) as a {-1, +1} channel."""
    if mask.ndim == 3:
        mask = mask.unsqueeze(1)
    return mask * 2.0 - 1.0


def generate_shadowfree(g_f: Generator, img: torch.Tensor) -> torch.Tensor:
    return g_f(img)


def generate_shadow(g_s: Generator, img: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    mask = mask.to(img.dtype)
    if mask.shape[-2:] != img.shape[-2:]:
        raise ValueError(f"mask size {tuple(mask.shape[-2:])} does not match image {tuple(img.shape[-2:])}")
    return g_s(torch.cat([img, mask_channel(mask)], dim=1))


def discriminate(d: Discriminator, img: torch.Tensor) -> torch.Tensor:
    return d(img)


def architecture(net: nn.Module) -> dict:
    """Constructor arguments plus parameter names and shapes."""
    if isinstance(net, Generator):
        kind = {"type": "generator", "in_channels": net.in_channels, "n_blocks": net.n_blocks, "width": net.width}
    elif isinstance(net, Discriminator):
        kind = {"type": "discriminator", "in_channels": net.in_channels, "width": net.width, "norm": net.norm}
    else:
        raise TypeError(type(net).__name__)
    kind["params"] = [[name, list(p.shape)] for name, p in net.named_parameters()]
    return kind


def fingerprint(nets: dict[str, nn.Module]) -> str:
    desc = {name: architecture(net) for name, net in sorted(nets.items())}
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


def build(arch: dict) -> nn.Module:
    if arch["type"] == "generator":
        return Generator(arch["in_channels"], arch["n_blocks"], arch["width"])
    return Discriminator(arch["in_channels"], arch["width"], arch.get("norm", True))


def to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W, C) array -> (1, C, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(img, -1, 0))).to(dtype).unsqueeze(0)


def to_array(t: torch.Tensor) -> np.ndarray:
    """(1, C, H, W) tensor -> (H, W, C) float64 array."""
    return np.moveaxis(t.detach().cpu().to(torch.float64).numpy()[0], 0, -1)
