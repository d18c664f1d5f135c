"""Joint training of the shadow remover, the mask-guided shadow synthesizer and
their discriminators.

Every iteration draws one shadow image and one shadow-free image. Branch A
removes the shadow, derives a mask from the result and reconstructs the
input through the synthesizer; branch B casts a replayed mask onto the
shadow-free image and removes it again. Generators are updated jointly,
then each discriminator on detached fakes.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import images as im
from .losses import (
    LossBundle,
    LossWeights,
    NonFiniteLoss,
    cycle_loss_a,
    cycle_loss_b,
    discriminator_adv,
    generator_adv,
    identity_loss_a,
    identity_loss_b,
    total_loss,
    weighted_total,
)
from .masks import MaskQueue, QueueEmpty, make_mask, queue_capacity, zero_mask
from .networks import (
    Discriminator,
    Generator,
    architecture,
    build,
    fingerprint,
    generate_shadow,
    generate_shadowfree,
    init_params,
    to_array,
    to_tensor,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ["step", "epoch", "gan_a", "gan_b", "cycle_a", "cycle_b", "id_a", "id_b", "total", "lr"]
DTYPES = {"single": torch.float32, "double": torch.float64}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 2e-4
    warm_epochs: int = 100
    decay_epochs: int = 100
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 1
    crop_size: int = 256
    seed: int = 0
    adv_loss: str = "bce"
    flip: bool = True
    history_pool: int = 0
    sample_every: int = 200
    precision: str = "single"
    w_adv: float = 1.0
    w_cycle: float = 10.0
    w_identity: float = 5.0
    n_blocks: int = 9
    gen_width: int = 64
    disc_width: int = 64

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        if self.history_pool != 0:
            raise ValueError("history_pool is reserved and must be 0")
        if self.crop_size <= 0 or self.crop_size % 4:
            raise ValueError(f"crop_size must be a positive multiple of 4, got {self.crop_size}")
        if self.adv_loss not in ("bce", "lsgan"):
            raise ValueError(f"adv_loss must be bce or lsgan, got {self.adv_loss!r}")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be single or double, got {self.precision!r}")
        if self.warm_epochs < 0 or self.decay_epochs < 0:
            raise ValueError("epoch counts must be non-negative")

    @property
    def total_epochs(self) -> int:
        return self.warm_epochs + self.decay_epochs

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_adv, self.w_cycle, self.w_identity)

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.precision]

    def with_epochs(self, epochs: int) -> "TrainConfig":
        """Scale the schedule to ``epochs``, split evenly between constant and decay phases."""
        warm = epochs // 2
        return dataclasses.replace(self, warm_epochs=warm, decay_epochs=epochs - warm)


def _parse_value(raw: str, typ):
    if typ in (bool, "bool"):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw.strip()


def read_config(path: str | Path, **overrides) -> TrainConfig:
    """Read flat ``key=value`` lines whose keys are :class:`TrainConfig` fields."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or key not in types:
            raise ValueError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
        values[key] = _parse_value(raw.strip(), types[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def lr_at(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    """Constant for ``warm_epochs``, then linear to zero over ``decay_epochs``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch < cfg.warm_epochs:
        return cfg.base_lr
    if epoch >= cfg.total_epochs:
        return 0.0
    return cfg.base_lr * (cfg.total_epochs - epoch) / cfg.decay_epochs


def training_complete(epoch: int, cfg: TrainConfig) -> bool:
    return epoch >= cfg.total_epochs


def _check_gradients(step: int, nets: dict[str, torch.nn.Module]) -> None:
    # exactly constant inputs give instance norm zero variance; its 1/sqrt(eps)
    # backward gain then compounds over the residual blocks and overflows
    for name, net in nets.items():
        for pname, p in net.named_parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise TrainingDiverged(f"step {step}: non-finite gradient in {name}.{pname}")


def _as_tensor_mask(mask: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(mask).to(dtype)[None, None]


class Trainer:
    """Networks, optimizers, mask queue and RNG for one training run."""

    def __init__(self, cfg: TrainConfig, n_shadow: int, init: str = "gaussian"):
        self.cfg = cfg
        self.dtype = cfg.dtype
        self.g_f = Generator(3, cfg.n_blocks, cfg.gen_width)
        self.g_s = Generator(4, cfg.n_blocks, cfg.gen_width)
        self.d_f = Discriminator(3, cfg.disc_width)
        self.d_s = Discriminator(3, cfg.disc_width)
        torch_rng = torch.Generator().manual_seed(cfg.seed)
        for net in self.nets.values():
            if init == "gaussian":
                init_params(net, torch_rng)
            net.to(self.dtype)
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        lr = lr_at(0, cfg)
        self.opt_g = torch.optim.Adam(list(self.g_f.parameters()) + list(self.g_s.parameters()), lr=lr, betas=betas)
        self.opt_df = torch.optim.Adam(self.d_f.parameters(), lr=lr, betas=betas)
        self.opt_ds = torch.optim.Adam(self.d_s.parameters(), lr=lr, betas=betas)
        self.queue = MaskQueue(queue_capacity(n_shadow))
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.step = 0

    @property
    def nets(self) -> dict[str, torch.nn.Module]:
        return {"g_f": self.g_f, "g_s": self.g_s, "d_f": self.d_f, "d_s": self.d_s}

    @property
    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {"g": self.opt_g, "d_f": self.opt_df, "d_s": self.opt_ds}

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers.values():
            for group in opt.param_groups:
                group["lr"] = lr

    # -- branches -----------------------------------------------------------

    def branch_a(self, real_s: torch.Tensor) -> dict:
        """Shadow image -> shadow-free -> mask-guided reconstruction."""
        kind = self.cfg.adv_loss
        fake_f = generate_shadowfree(self.g_f, real_s)
        mask_l = make_mask(to_array(real_s), to_array(fake_f))
        self.queue.push(mask_l)
        m_l = _as_tensor_mask(mask_l, self.dtype)
        rec_s = generate_shadow(self.g_s, fake_f, m_l)
        m_n = _as_tensor_mask(zero_mask(*mask_l.shape), self.dtype)
        idt_s = generate_shadow(self.g_s, real_s, m_n)
        return {
            "fake_f": fake_f, "mask_l": mask_l, "rec_s": rec_s, "idt_s": idt_s,
            "gan_a": generator_adv(self.d_f(fake_f), kind),
            "cycle_a": cycle_loss_a(rec_s, real_s),
            "identity_a": identity_loss_a(idt_s, real_s),
        }

    def branch_b(self, real_f: torch.Tensor) -> dict:
        """Shadow-free image + replayed mask -> shadow -> shadow-free again."""
        kind = self.cfg.adv_loss
        try:
            mask_r = self.queue.sample(self.rng)
        except QueueEmpty:
            mask_r = zero_mask(*real_f.shape[-2:])
        fake_s = generate_shadow(self.g_s, real_f, _as_tensor_mask(mask_r, self.dtype))
        rec_f = generate_shadowfree(self.g_f, fake_s)
        idt_f = generate_shadowfree(self.g_f, real_f)
        return {
            "fake_s": fake_s, "mask_r": mask_r, "rec_f": rec_f, "idt_f": idt_f,
            "gan_b": generator_adv(self.d_s(fake_s), kind),
            "cycle_b": cycle_loss_b(rec_f, real_f),
            "identity_b": identity_loss_b(idt_f, real_f),
        }

    # -- one optimization step ----------------------------------------------

    def train_step(self, real_s: torch.Tensor, real_f: torch.Tensor) -> tuple[LossBundle, dict]:
        real_s = real_s.to(self.dtype)
        real_f = real_f.to(self.dtype)
        if not (torch.isfinite(real_s).all() and torch.isfinite(real_f).all()):
            raise TrainingDiverged(f"step {self.step}: non-finite input image")
        self.set_lr(lr_at(self.epoch, self.cfg))
        kind = self.cfg.adv_loss

        for d in (self.d_f, self.d_s):
            d.requires_grad_(False)
        self.opt_g.zero_grad(set_to_none=True)
        try:
            a = self.branch_a(real_s)
            b = self.branch_b(real_f)
            terms = {**{k: a[k] for k in ("gan_a", "cycle_a", "identity_a")},
                     **{k: b[k] for k in ("gan_b", "cycle_b", "identity_b")}}
            objective = weighted_total(terms, self.cfg.weights)
        except NonFiniteLoss as e:
            raise TrainingDiverged(f"step {self.step}: {e}") from e
        objective.backward()
        _check_gradients(self.step, {"g_f": self.g_f, "g_s": self.g_s})
        self.opt_g.step()
        for d in (self.d_f, self.d_s):
            d.requires_grad_(True)

        disc = {}
        for name, net_name, d, opt, real, fake in (
            ("d_a", "d_f", self.d_f, self.opt_df, real_f, a["fake_f"]),
            ("d_b", "d_s", self.d_s, self.opt_ds, real_s, b["fake_s"]),
        ):
            opt.zero_grad(set_to_none=True)
            try:
                loss = discriminator_adv(d(real), d(fake.detach()), kind)
            except NonFiniteLoss as e:
                raise TrainingDiverged(f"step {self.step}: {e}") from e
            loss.backward()
            _check_gradients(self.step, {net_name: d})
            opt.step()
            disc[name] = float(loss.detach())

        self.step += 1
        bundle = total_loss({k: float(v.detach()) for k, v in terms.items()}, self.cfg.weights)
        return bundle, {**a, **b, **disc}

    # -- data -----------------------------------------------------------------

    def epoch_order(self, n_shadow: int, n_free: int) -> list[tuple[int, int]]:
        """max(n_shadow, n_free) index pairs; the smaller domain is reshuffled and recycled."""
        steps = max(n_shadow, n_free)

        def stream(n):
            out = []
            while len(out) < steps:
                out.extend(self.rng.permutation(n).tolist())
            return out[:steps]

        return list(zip(stream(n_shadow), stream(n_free)))

    def augment(self, img: np.ndarray, crop: int) -> torch.Tensor:
        h, w = img.shape[:2]
        top = int(self.rng.integers(h - crop + 1))
        left = int(self.rng.integers(w - crop + 1))
        out = img[top:top + crop, left:left + crop]
        if self.cfg.flip and self.rng.random() < 0.5:
            out = out[:, ::-1]
        return to_tensor(out, self.dtype)

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "fingerprint": fingerprint(self.nets),
            "config": dataclasses.asdict(self.cfg),
            "epoch": self.epoch,
            "step": self.step,
            "networks": {
                name: {
                    "arch": architecture(net),
                    "params": [[pname, list(p.shape), p.detach().clone()] for pname, p in net.named_parameters()],
                }
                for name, net in self.nets.items()
            },
            "optimizers": {name: opt.state_dict() for name, opt in self.optimizers.items()},
            "mask_queue": self.queue.to_state(),
            "rng": self.rng.bit_generator.state,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict(), path)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "Trainer":
        state = read_checkpoint(path)
        cfg = TrainConfig(**{**state["config"], **{k: v for k, v in overrides.items() if v is not None}})
        self = cls(cfg, n_shadow=1, init="none")
        for name, net in self.nets.items():
            _load_params(net, state["networks"][name]["params"])
            net.to(self.dtype)
        if fingerprint(self.nets) != state["fingerprint"]:
            raise ValueError(f"{path}: architecture fingerprint mismatch")
        for name, opt in self.optimizers.items():
            opt.load_state_dict(state["optimizers"][name])
        self.queue = MaskQueue.from_state(state["mask_queue"])
        self.rng.bit_generator.state = state["rng"]
        self.epoch = state["epoch"]
        self.step = state["step"]
        return self


def read_checkpoint(path: str | Path) -> dict:
    state = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(state, dict) or state.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format")
    return state


def _load_params(net: torch.nn.Module, params: list) -> None:
    own = dict(net.named_parameters())
    if [p[0] for p in params] != list(own):
        raise ValueError("parameter names do not match the architecture")
    with torch.no_grad():
        for name, shape, tensor in params:
            if list(own[name].shape) != list(shape) or list(tensor.shape) != list(shape):
                raise ValueError(f"parameter {name}: shape {list(tensor.shape)} != declared {shape}")
            own[name].copy_(tensor)


def load_generators(path: str | Path, dtype=torch.float32) -> tuple[Generator, Generator]:
    """Shadow remover and shadow synthesizer from a checkpoint, in eval mode."""
    state = read_checkpoint(path)
    nets = {name: build(entry["arch"]) for name, entry in state["networks"].items()}
    if fingerprint(nets) != state["fingerprint"]:
        raise ValueError(f"{path}: architecture fingerprint mismatch")
    for name, net in nets.items():
        _load_params(net, state["networks"][name]["params"])
    g_f, g_s = nets["g_f"].to(dtype).eval(), nets["g_s"].to(dtype).eval()
    return g_f, g_s


def save_identity_checkpoint(path: str | Path, cfg: TrainConfig = TrainConfig()) -> None:
    """A checkpoint whose generators are exact identity maps (all weights zero)."""
    trainer = Trainer(cfg, n_shadow=1, init="none")
    for net in trainer.nets.values():
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
    trainer.save(path)


# -- dataset-level loop -------------------------------------------------------


class LoadedDataset:
    """Decoded images of both domains, held in memory."""

    def __init__(self, ds: im.UnpairedDataset):
        ds.validate()
        self.shadow = [im.load_image(p) for p in ds.shadow_images]
        self.free = [im.load_image(p) for p in ds.shadowfree_images]

    def crop_size(self, requested: int) -> int:
        smallest = min(min(x.shape[:2]) for x in self.shadow + self.free)
        return min(requested, smallest - smallest % 4)


def sample_grid(real_s: torch.Tensor, fake_f: torch.Tensor, rec_s: torch.Tensor, mask: np.ndarray) -> np.ndarray:
    """[input | shadow-free | reconstruction | mask] as one 8-bit RGB strip."""
    tiles = [im.decode_image(to_array(t)) for t in (real_s, fake_f, rec_s)]
    tiles.append(np.repeat(mask[..., None] * np.uint8(255), 3, axis=-1))
    return np.concatenate(tiles, axis=1)


def train_epoch(
    trainer: Trainer,
    data: LoadedDataset,
    on_step: Callable[[LossBundle, dict], None] | None = None,
) -> list[LossBundle]:
    crop = data.crop_size(trainer.cfg.crop_size)
    bundles = []
    for i_s, i_f in trainer.epoch_order(len(data.shadow), len(data.free)):
        real_s = trainer.augment(data.shadow[i_s], crop)
        real_f = trainer.augment(data.free[i_f], crop)
        bundle, outputs = trainer.train_step(real_s, real_f)
        outputs["real_s"] = real_s
        bundles.append(bundle)
        if on_step is not None:
            on_step(bundle, outputs)
    trainer.epoch += 1
    return bundles


def log_row(step: int, epoch: int, bundle: LossBundle, lr: float) -> list[str]:
    vals = [bundle.gan_a, bundle.gan_b, bundle.cycle_a, bundle.cycle_b, bundle.identity_a, bundle.identity_b, bundle.total]
    return [str(step), str(epoch)] + [repr(float(v)) for v in vals] + [repr(float(lr))]


def fit(trainer: Trainer, data: LoadedDataset, out: str | Path, epochs: int | None = None) -> Trainer:
    """Run epochs until the schedule ends, writing checkpoints, the loss log and sample grids."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "losses.csv"
    fresh = not log_path.exists() or trainer.step == 0
    last = trainer.cfg.total_epochs if epochs is None else min(epochs, trainer.cfg.total_epochs)
    if training_complete(trainer.epoch, trainer.cfg):
        log.info("schedule already complete at epoch %d", trainer.epoch)
        return trainer
    with open(log_path, "w" if fresh else "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_COLUMNS)

        def on_step(bundle: LossBundle, outputs: dict) -> None:
            lr = lr_at(trainer.epoch, trainer.cfg)
            writer.writerow(log_row(trainer.step, trainer.epoch, bundle, lr))
            every = trainer.cfg.sample_every
            if every and trainer.step % every == 0:
                grid = sample_grid(outputs["real_s"], outputs["fake_f"], outputs["rec_s"], outputs["mask_l"])
                im.write_png(out / "samples" / f"step_{trainer.step}.png", grid)

        while trainer.epoch < last:
            bundles = train_epoch(trainer, data, on_step)
            fh.flush()
            mean_total = float(np.mean([b.total for b in bundles]))
            log.info("epoch %d/%d done: step %d, mean generator loss %.4f",
                     trainer.epoch, trainer.cfg.total_epochs, trainer.step, mean_total)
            trainer.save(out / f"epoch_{trainer.epoch}.ckpt")
    return trainer
