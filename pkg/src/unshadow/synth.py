"""Procedural unpaired shadow datasets with hidden ground truth.

Shadow images are rendered by darkening a background multiplicatively
inside a rasterized shape. The clean background and the exact shape are
kept under ``truth/`` for evaluation; the training manifest never points
there. Shadow and shadow-free scenes come from disjoint seed streams.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw
from scipy.ndimage import gaussian_filter

from . import images as im

log = logging.getLogger(__name__)

BACKGROUNDS = ("flat-color", "gradient", "checker", "perlin-texture")
SHAPES = ("polygon", "ellipse", "soft-blob")


@dataclass
class SynthConfig:
    n_shadow: int = 64
    n_shadowfree: int = 48
    image_size: int = 64
    background: list[str] = field(default_factory=lambda: list(BACKGROUNDS))
    shadow_shape: list[str] = field(default_factory=lambda: list(SHAPES))
    attenuation: tuple[float, float] = (0.4, 0.7)
    penumbra_width: float = 0.0
    noise_std: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.background, str):
            self.background = [b.strip() for b in self.background.split(",")]
        if isinstance(self.shadow_shape, str):
            self.shadow_shape = [s.strip() for s in self.shadow_shape.split(",")]
        if isinstance(self.attenuation, str):
            self.attenuation = tuple(float(v) for v in self.attenuation.split(","))
        self.attenuation = tuple(float(v) for v in self.attenuation)
        if self.n_shadow < 1 or self.n_shadowfree < 1:
            raise ValueError("n_shadow and n_shadowfree must be at least 1")
        if self.image_size < 8 or self.image_size % 4:
            raise ValueError(f"image_size must be a multiple of 4 and at least 8, got {self.image_size}")
        bad = [b for b in self.background if b not in BACKGROUNDS] + [s for s in self.shadow_shape if s not in SHAPES]
        if bad or not self.background or not self.shadow_shape:
            raise ValueError(f"unknown background or shape: {bad}")
        lo, hi = self.attenuation if len(self.attenuation) == 2 else (None, None)
        # a factor of exactly 1 is allowed as the degenerate "no shadow" case
        if lo is None or not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"attenuation must satisfy 0 < a_min <= a_max <= 1, got {self.attenuation}")
        if self.penumbra_width < 0 or self.noise_std < 0:
            raise ValueError("penumbra_width and noise_std must be non-negative")


def read_synth_config(path: str | Path, **overrides) -> SynthConfig:
    types = {f.name for f in dataclasses.fields(SynthConfig)}
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or key not in types:
            raise ValueError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
        if key in ("n_shadow", "n_shadowfree", "image_size", "seed"):
            values[key] = int(raw)
        elif key in ("penumbra_width", "noise_std"):
            values[key] = float(raw)
        else:
            values[key] = raw
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig(**values)


# -- backgrounds -------------------------------------------------------------


def _color(rng: np.random.Generator, lo: float = 70, hi: float = 235) -> np.ndarray:
    return rng.uniform(lo, hi, size=3)


def perlin(size: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    """2-D gradient noise in roughly [-1, 1] with ``cells`` lattice cells per side."""
    angles = rng.uniform(0, 2 * np.pi, size=(cells + 1, cells + 1))
    grads = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    coords = (np.arange(size) + 0.5) * cells / size
    x, y = np.meshgrid(coords, coords, indexing="xy")
    x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
    fx, fy = x - x0, y - y0

    def dot(ix, iy, dx, dy):
        g = grads[iy, ix]
        return g[..., 0] * dx + g[..., 1] * dy

    fade = lambda t: t * t * t * (t * (t * 6 - 15) + 10)  # noqa: E731
    u, v = fade(fx), fade(fy)
    n00 = dot(x0, y0, fx, fy)
    n10 = dot(x0 + 1, y0, fx - 1, fy)
    n01 = dot(x0, y0 + 1, fx, fy - 1)
    n11 = dot(x0 + 1, y0 + 1, fx - 1, fy - 1)
    top = n00 + u * (n10 - n00)
    bottom = n01 + u * (n11 - n01)
    return np.sqrt(2.0) * (top + v * (bottom - top))


def render_background(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Float RGB background in 8-bit units, shape (size, size, 3)."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    if kind == "flat-color":
        return np.broadcast_to(_color(rng), (size, size, 3)).copy()
    if kind == "gradient":
        c0, c1 = _color(rng), _color(rng)
        theta = rng.uniform(0, 2 * np.pi)
        t = np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
        return c0 + t[..., None] * (c1 - c0)
    if kind == "checker":
        c0, c1 = _color(rng), _color(rng)
        cell = int(rng.integers(max(2, size // 8), max(3, size // 3)))
        ox, oy = rng.integers(cell, size=2)
        ix = (np.arange(size) + ox) // cell
        iy = (np.arange(size) + oy) // cell
        sel = ((iy[:, None] + ix[None, :]) % 2).astype(bool)
        return np.where(sel[..., None], c1, c0)
    if kind == "perlin-texture":
        base = _color(rng, 100, 200)
        noise = sum(perlin(size, 2 ** k, rng) / 2 ** (k - 1) for k in range(1, 4)) / 1.75
        tint = rng.uniform(0.6, 1.0, size=3)
        return base + 35.0 * noise[..., None] * tint
    raise ValueError(f"unknown background {kind!r}")


# -- shadow geometry -----------------------------------------------------------


def random_geometry(kind: str, size: int, rng: np.random.Generator) -> dict:
    """A shape record in pixel coordinates: a list of polygons whose union is the shadow."""
    cx, cy = rng.uniform(0.2, 0.8, size=2) * size
    if kind == "polygon":
        n = int(rng.integers(3, 7))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        radii = rng.uniform(0.2, 0.4, size=n) * size
        polys = [np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=-1)]
    elif kind == "ellipse":
        polys = [_ellipse(cx, cy, *(rng.uniform(0.12, 0.35, size=2) * size), rng.uniform(0, np.pi))]
    elif kind == "soft-blob":
        polys = []
        for _ in range(int(rng.integers(2, 5))):
            ox, oy = rng.normal(0, 0.08, size=2) * size
            rx, ry = rng.uniform(0.08, 0.2, size=2) * size
            polys.append(_ellipse(cx + ox, cy + oy, rx, ry, rng.uniform(0, np.pi)))
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return {"shape": kind, "polygons": [np.round(p, 3).tolist() for p in polys]}


def _ellipse(cx, cy, rx, ry, rot, n: int = 48) -> np.ndarray:
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    x, y = rx * np.cos(t), ry * np.sin(t)
    c, s = np.cos(rot), np.sin(rot)
    return np.stack([cx + c * x - s * y, cy + s * x + c * y], axis=-1)


def rasterize(geometry: dict | None, size: int) -> np.ndarray:
    """Binary mask of the union of the record's polygons."""
    canvas = PILImage.new("L", (size, size), 0)
    if geometry:
        draw = ImageDraw.Draw(canvas)
        for poly in geometry["polygons"]:
            draw.polygon([tuple(p) for p in poly], fill=1)
    return np.asarray(canvas, dtype=np.uint8).copy()


def cast_shadow(background: np.ndarray, mask: np.ndarray, factors: np.ndarray, penumbra: float) -> np.ndarray:
    """Multiply each channel by its factor inside the mask; a penumbra blurs the mask edge."""
    alpha = mask.astype(np.float64)
    if penumbra > 0:
        alpha = gaussian_filter(alpha, sigma=penumbra / 2.0, mode="nearest")
    gain = 1.0 - alpha[..., None] * (1.0 - np.asarray(factors)[None, None, :])
    return background * gain


def quantize(arr: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(arr, 0.0, 255.0) + 0.5).astype(np.uint8)


def _noisy(arr: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    return arr + rng.normal(0.0, std, size=arr.shape) if std > 0 else arr


# -- dataset -------------------------------------------------------------------


def render_shadow_pair(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, dict]:
    """(shadow image, clean truth, record), both images 8-bit."""
    size = cfg.image_size
    bg_kind = cfg.background[int(rng.integers(len(cfg.background)))]
    shape_kind = cfg.shadow_shape[int(rng.integers(len(cfg.shadow_shape)))]
    background = render_background(bg_kind, size, rng)
    geometry = random_geometry(shape_kind, size, rng)
    lo, hi = cfg.attenuation
    base = rng.uniform(lo, hi)
    factors = np.clip(base + rng.uniform(-0.03, 0.03, size=3), lo, hi)
    if np.all(factors >= 1.0):
        geometry = None
    mask = rasterize(geometry, size)
    shadow = cast_shadow(background, mask, factors, cfg.penumbra_width)
    truth8 = quantize(_noisy(background, cfg.noise_std, rng))
    shadow8 = quantize(_noisy(shadow, cfg.noise_std, rng))
    record = {
        "background": bg_kind,
        "geometry": geometry,
        "attenuation": [round(float(f), 6) for f in factors],
        "size": size,
    }
    return shadow8, truth8, record


def render_shadowfree(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    kind = cfg.background[int(rng.integers(len(cfg.background)))]
    return quantize(_noisy(render_background(kind, cfg.image_size, rng), cfg.noise_std, rng))


def synth_dataset(cfg: SynthConfig, out: str | Path) -> im.UnpairedDataset:
    """Write images/, manifest.tsv and truth/ under ``out``."""
    out = Path(out)
    for sub in ("images", "truth/free", "truth/masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    shadow_seq, free_seq = np.random.SeedSequence(cfg.seed).spawn(2)

    shadow_paths, free_paths, pair_rows, records = [], [], [], {}
    for i, seq in enumerate(shadow_seq.spawn(cfg.n_shadow)):
        name = f"s_{i:04d}.png"
        shadow8, truth8, record = render_shadow_pair(cfg, np.random.default_rng(seq))
        im.write_png(out / "images" / name, shadow8)
        im.write_png(out / "truth" / "free" / name, truth8)
        im.write_mask_png(out / "truth" / "masks" / name, rasterize(record["geometry"], cfg.image_size))
        shadow_paths.append(f"images/{name}")
        pair_rows.append((f"../images/{name}", f"free/{name}", f"masks/{name}"))
        records[name] = record
    for i, seq in enumerate(free_seq.spawn(cfg.n_shadowfree)):
        name = f"f_{i:04d}.png"
        im.write_png(out / "images" / name, render_shadowfree(cfg, np.random.default_rng(seq)))
        free_paths.append(f"images/{name}")

    im.write_manifest(out / "manifest.tsv", shadow_paths, free_paths)
    im.write_pairs(out / "truth" / "pairs.tsv", pair_rows)
    config = dataclasses.asdict(cfg)
    (out / "truth" / "records.json").write_text(
        json.dumps({"config": config, "images": records}, indent=1, sort_keys=True) + "\n"
    )
    log.info("wrote %d shadow and %d shadow-free images to %s", cfg.n_shadow, cfg.n_shadowfree, out)
    return im.read_manifest(out / "manifest.tsv")


def synth_truth_mask(shadow_path: str | Path) -> np.ndarray:
    """Exact shadow mask of a synthesized shadow image, re-rasterized from its geometry record."""
    shadow_path = Path(shadow_path)
    records_path = shadow_path.parent.parent / "truth" / "records.json"
    if not records_path.exists():
        raise ValueError(f"{shadow_path} is not part of a synthetic dataset")
    records = json.loads(records_path.read_text())["images"]
    if shadow_path.name not in records:
        raise ValueError(f"{shadow_path.name} has no synthetic record")
    record = records[shadow_path.name]
    return rasterize(record["geometry"], record["size"])
