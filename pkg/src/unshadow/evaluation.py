"""CIELAB RMSE between predicted and ground-truth shadow-free images."""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from . import images as im
from .masks import make_mask
from .networks import Generator, to_array, to_tensor

log = logging.getLogger(__name__)

# D65, 2 degree observer
WHITE = np.array([95.047, 100.0, 108.883])
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
_DELTA = 6.0 / 29.0


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1 / 2.4) - 0.055)


def srgb8_to_lab(rgb: np.ndarray) -> np.ndarray:
    """8-bit sRGB (..., 3) -> CIELAB (..., 3)."""
    lin = srgb_to_linear(np.asarray(rgb, dtype=np.float64) / 255.0)
    xyz = 100.0 * lin @ SRGB_TO_XYZ.T / WHITE
    f = np.where(xyz > _DELTA ** 3, np.cbrt(xyz), xyz / (3 * _DELTA ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_srgb8(lab: np.ndarray) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    f = np.stack([fy + lab[..., 1] / 500.0, fy, fy - lab[..., 2] / 200.0], axis=-1)
    xyz = np.where(f > _DELTA, f ** 3, 3 * _DELTA ** 2 * (f - 4.0 / 29.0)) * WHITE / 100.0
    rgb = linear_to_srgb(xyz @ XYZ_TO_SRGB.T)
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def to_lab(img: np.ndarray) -> np.ndarray:
    """[-1, 1] image -> 8-bit sRGB -> CIELAB."""
    return srgb8_to_lab(im.decode_image(img))


def rmse_lab(pred: np.ndarray, truth: np.ndarray, select: np.ndarray | None = None) -> float:
    """RMSE over selected pixels and all three LAB channels (divides by 3N).

    Returns NaN when ``select`` picks no pixels.
    """
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    sq = (to_lab(pred) - to_lab(truth)) ** 2
    if select is not None:
        select = np.asarray(select, dtype=bool)
        if select.shape != pred.shape[:2]:
            raise ValueError(f"region shape {select.shape} does not match image {pred.shape[:2]}")
        sq = sq[select]
    if sq.size == 0:
        return math.nan
    return float(np.sqrt(sq.mean()))


def region_rmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> tuple[float, float, float]:
    """(all, inside mask, outside mask)."""
    mask = np.asarray(mask).astype(bool)
    return rmse_lab(pred, truth), rmse_lab(pred, truth, mask), rmse_lab(pred, truth, ~mask)


@torch.no_grad()
def remove_shadow(g_f: Generator, img: np.ndarray) -> np.ndarray:
    """Run the shadow remover at full size, reflect-padding to a multiple of 4."""
    padded, (h, w) = im.pad_to_multiple(img)
    dtype = next(g_f.parameters()).dtype
    out = to_array(g_f(to_tensor(padded, dtype)))
    return out[:h, :w]


def _nanmean(values: list[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def evaluate(g_f: Generator, pairs: list[im.EvalPair], out: str | Path) -> dict:
    """Per-image and mean RMSE for ``g_f`` on ``pairs``; writes report.csv, summary.json, pred/*.png."""
    out = Path(out)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    rows, skipped, sources = [], [], set()
    baseline = []
    for pair in sorted(pairs, key=lambda p: str(p.shadow)):
        if not pair.truth.exists() or not pair.shadow.exists():
            log.warning("skipping %s: missing file", pair.shadow)
            skipped.append(str(pair.shadow))
            continue
        shadow = im.encode_image(im.read_png(pair.shadow))
        truth = im.encode_image(im.read_png(pair.truth))
        if shadow.shape != truth.shape:
            log.warning("skipping %s: size differs from its truth", pair.shadow)
            skipped.append(str(pair.shadow))
            continue
        if pair.mask is not None and pair.mask.exists():
            mask, source = im.read_mask_png(pair.mask), "truth"
        else:
            mask, source = make_mask(shadow, truth), "otsu"
        sources.add(source)
        pred = remove_shadow(g_f, shadow)
        pred8 = im.decode_image(pred)
        im.write_png(out / "pred" / pair.shadow.name, pred8)
        rows.append((str(pair.shadow), *region_rmse(im.encode_image(pred8), truth, mask)))
        baseline.append(region_rmse(shadow, truth, mask))

    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "rmse_all", "rmse_shadow", "rmse_nonshadow"])
        for path, *vals in rows:
            writer.writerow([path] + [repr(v) for v in vals])

    summary = {
        "count": len(rows),
        "skipped": len(skipped),
        "mask_source": "+".join(sorted(sources)) or "none",
        "rmse_all": _nanmean([r[1] for r in rows]),
        "rmse_shadow": _nanmean([r[2] for r in rows]),
        "rmse_nonshadow": _nanmean([r[3] for r in rows]),
        "baseline_all": _nanmean([b[0] for b in baseline]),
        "baseline_shadow": _nanmean([b[1] for b in baseline]),
        "baseline_nonshadow": _nanmean([b[2] for b in baseline]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def evaluate_checkpoint(ckpt: str | Path, pairs_manifest: str | Path, out: str | Path,
                        dtype: torch.dtype = torch.float32) -> dict:
    from .trainer import load_generators

    g_f, _ = load_generators(ckpt, dtype)
    return evaluate(g_f, im.read_pairs(pairs_manifest), out)
