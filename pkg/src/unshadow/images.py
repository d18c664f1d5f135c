"""Image and mask containers, PNG I/O and dataset manifests.

Images live as float arrays of shape (H, W, 3) with values in [-1, 1];
masks as uint8 arrays of shape (H, W) holding only 0 and 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

log = logging.getLogger(__name__)

SHADOW = "s"
SHADOW_FREE = "f"


def encode_image(raw: np.ndarray) -> np.ndarray:
    """Map an 8-bit RGB grid (H, W, 3) to float64 values in [-1, 1]."""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ValueError(f"expected 3 channels, got array of shape {raw.shape}")
    return raw.astype(np.float64) / 127.5 - 1.0


def decode_image(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_image` with round-half-up quantization."""
    img = np.clip(np.asarray(img, dtype=np.float64), -1.0, 1.0)
    return np.floor((img + 1.0) * 127.5 + 0.5).astype(np.uint8)


def check_mask(mask: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match image {tuple(shape)}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    return mask.astype(np.uint8)


def crop_to_multiple(img: np.ndarray, k: int = 4) -> np.ndarray:
    """Center-crop so height and width are multiples of ``k``."""
    h, w = img.shape[:2]
    nh, nw = h - h % k, w - w % k
    if nh == 0 or nw == 0:
        raise ValueError(f"image {h}x{w} is smaller than {k} pixels")
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top:top + nh, left:left + nw]


def pad_to_multiple(img: np.ndarray, k: int = 4) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad bottom/right to multiples of ``k``; returns the original size."""
    h, w = img.shape[:2]
    ph, pw = (-h) % k, (-w) % k
    if ph or pw:
        pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
        img = np.pad(img, pad, mode="reflect" if min(h, w) > max(ph, pw) else "edge")
    return img, (h, w)


def read_png(path: str | Path) -> np.ndarray:
    """Read a file as an 8-bit RGB array; alpha and palettes are dropped."""
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(path: str | Path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(np.asarray(arr, dtype=np.uint8)).save(path, format="PNG")


def load_image(path: str | Path, multiple: int = 4) -> np.ndarray:
    return encode_image(crop_to_multiple(read_png(path), multiple))


def read_mask_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)


def write_mask_png(path: str | Path, mask: np.ndarray) -> None:
    write_png(path, check_mask(mask) * np.uint8(255))


@dataclass
class UnpairedDataset:
    """Two unrelated image collections plus optional evaluation-only truth."""

    shadow_images: list[Path]
    shadowfree_images: list[Path]
    paired_truth: dict[Path, Path] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.shadow_images or not self.shadowfree_images:
            raise ValueError(
                f"training needs images in both domains (got {len(self.shadow_images)} shadow, "
                f"{len(self.shadowfree_images)} shadow-free)"
            )


def _manifest_lines(path: Path):
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        yield lineno, line.split("\t")


def read_manifest(path: str | Path) -> UnpairedDataset:
    """Parse ``<s|f>\\t<relative path>`` lines; paths resolve against the manifest's directory."""
    path = Path(path)
    root = path.parent
    ds = UnpairedDataset([], [])
    for lineno, parts in _manifest_lines(path):
        if len(parts) != 2 or parts[0] not in (SHADOW, SHADOW_FREE):
            raise ValueError(f"{path}:{lineno}: expected '<s|f>\\t<path>'")
        target = ds.shadow_images if parts[0] == SHADOW else ds.shadowfree_images
        target.append(root / parts[1])
    return ds


def write_manifest(path: str | Path, shadow: list[str], shadowfree: list[str]) -> None:
    lines = [f"{SHADOW}\t{p}" for p in shadow] + [f"{SHADOW_FREE}\t{p}" for p in shadowfree]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class EvalPair:
    shadow: Path
    truth: Path
    mask: Path | None = None


def read_pairs(path: str | Path) -> list[EvalPair]:
    """Parse ``<shadow>\\t<truth>[\\t<mask>]`` lines relative to the manifest's directory."""
    path = Path(path)
    root = path.parent
    pairs = []
    for lineno, parts in _manifest_lines(path):
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected '<shadow>\\t<truth>[\\t<mask>]'")
        mask = root / parts[2] if len(parts) == 3 and parts[2] else None
        pairs.append(EvalPair(root / parts[0], root / parts[1], mask))
    return pairs


def write_pairs(path: str | Path, rows: list[tuple[str, ...]]) -> None:
    Path(path).write_text("".join("\t".join(r) + "\n" for r in rows))
