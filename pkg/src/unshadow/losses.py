"""Adversarial, cycle-consistency and identity losses and their weighted sum."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

ADV_KINDS = ("bce", "lsgan")


@dataclass(frozen=True)
class LossWeights:
    adversarial: float = 1.0
    cycle: float = 10.0
    identity: float = 5.0

    def __post_init__(self):
        if min(self.adversarial, self.cycle, self.identity) <= 0:
            raise ValueError("loss weights must be positive")


@dataclass
class LossBundle:
    gan_a: float
    gan_b: float
    cycle_a: float
    cycle_b: float
    identity_a: float
    identity_b: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


class NonFiniteLoss(FloatingPointError):
    pass


def _check_finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        raise NonFiniteLoss(f"non-finite values in {name}")


def generator_adv(fake_scores: torch.Tensor, kind: str = "bce") -> torch.Tensor:
    """Non-saturating generator term, averaged over the patch grid."""
    _check_finite("discriminator scores on fake", fake_scores)
    if kind == "bce":
        # -log(sigmoid(x)) == softplus(-x)
        return F.softplus(-fake_scores).mean()
    if kind == "lsgan":
        return ((fake_scores - 1.0) ** 2).mean()
    raise ValueError(f"unknown adversarial loss {kind!r}")


def discriminator_adv(real_scores: torch.Tensor, fake_scores: torch.Tensor, kind: str = "bce") -> torch.Tensor:
    """-log D(real) - log(1 - D(fake)), each averaged over its patch grid."""
    _check_finite("discriminator scores on real", real_scores)
    _check_finite("discriminator scores on fake", fake_scores)
    if kind == "bce":
        # -log(1 - sigmoid(x)) == softplus(x)
        return F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()
    if kind == "lsgan":
        return ((real_scores - 1.0) ** 2).mean() + (fake_scores ** 2).mean()
    raise ValueError(f"unknown adversarial loss {kind!r}")


def adv_loss_a(real_scores, fake_scores, kind: str = "bce"):
    """(generator term, discriminator term) for the shadow-free discriminator."""
    return generator_adv(fake_scores, kind), discriminator_adv(real_scores, fake_scores, kind)


def adv_loss_b(real_scores, fake_scores, kind: str = "bce"):
    """(generator term, discriminator term) for the shadow discriminator."""
    return generator_adv(fake_scores, kind), discriminator_adv(real_scores, fake_scores, kind)


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def cycle_loss_a(reconstructed, original):
    return l1(reconstructed, original)


def cycle_loss_b(reconstructed, original):
    return l1(reconstructed, original)


def identity_loss_a(generated, original):
    return l1(generated, original)


def identity_loss_b(generated, original):
    return l1(generated, original)


TERMS = ("gan_a", "gan_b", "cycle_a", "cycle_b", "identity_a", "identity_b")


def weighted_total(terms: dict, weights: LossWeights = LossWeights()):
    """Generator objective; works on tensors (for backprop) or plain floats."""
    for name in TERMS:
        v = terms[name]
        finite = torch.isfinite(v).all() if isinstance(v, torch.Tensor) else math.isfinite(v)
        if not finite:
            raise NonFiniteLoss(f"loss term {name} is not finite")
    return (
        weights.adversarial * (terms["gan_a"] + terms["gan_b"])
        + weights.cycle * (terms["cycle_a"] + terms["cycle_b"])
        + weights.identity * (terms["identity_a"] + terms["identity_b"])
    )


def total_loss(terms: dict, weights: LossWeights = LossWeights()) -> LossBundle:
    total = weighted_total(terms, weights)
    vals = {k: float(terms[k]) for k in TERMS}
    return LossBundle(total=float(total), **vals)
