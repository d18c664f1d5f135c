import csv
import json
import math

import numpy as np
import pytest

from oracles import rmse_lab_loop, srgb8_to_lab_scalar
from unshadow import images as im
from unshadow.evaluation import (
    evaluate,
    lab_to_srgb8,
    region_rmse,
    remove_shadow,
    rmse_lab,
    srgb8_to_lab,
    to_lab,
)
from unshadow.networks import Generator, zero_params


def pixel(r, g, b):
    return im.encode_image(np.array([[[r, g, b]]], dtype=np.uint8))


def test_white_and_black():
    L, a, b = to_lab(pixel(255, 255, 255))[0, 0]
    assert L == pytest.approx(100.0, abs=1e-3)
    assert abs(a) < 0.01 and abs(b) < 0.01
    assert np.allclose(to_lab(pixel(0, 0, 0))[0, 0], 0.0, atol=1e-12)


@pytest.mark.parametrize("rgb", [(255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0), (0, 255, 255),
                                 (255, 0, 255), (128, 128, 128), (12, 200, 77), (3, 5, 9)])
def test_lab_matches_scalar_oracle(rgb):
    got = to_lab(pixel(*rgb))[0, 0]
    want = srgb8_to_lab_scalar(*rgb)
    assert np.abs(got - np.array(want)).max() < 0.05


def test_red_reference_value():
    # widely tabulated value for sRGB red under D65
    assert np.allclose(srgb8_to_lab(np.array([255, 0, 0])), [53.24, 80.09, 67.20], atol=0.05)


def test_lab_round_trip_lattice():
    levels = np.arange(16) * 17
    rgb = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), axis=-1).reshape(-1, 3).astype(np.uint8)
    back = lab_to_srgb8(srgb8_to_lab(rgb))
    assert rgb.shape[0] == 4096
    assert np.abs(back.astype(int) - rgb.astype(int)).max() <= 1


def test_rmse_examples():
    white = np.ones((4, 4, 3))
    black = -np.ones((4, 4, 3))
    assert rmse_lab(white, white) == 0.0
    assert rmse_lab(black, white) == pytest.approx(math.sqrt(100.0**2 / 3), abs=1e-3)
    assert rmse_lab(black, white) == pytest.approx(57.735, abs=1e-3)


def test_rmse_matches_double_loop(rng):
    a = im.encode_image(rng.integers(0, 256, (6, 5, 3), dtype=np.uint8))
    b = im.encode_image(rng.integers(0, 256, (6, 5, 3), dtype=np.uint8))
    lab = lambda x: [[srgb8_to_lab_scalar(*p) for p in row] for row in im.decode_image(x).tolist()]  # noqa: E731
    la, lb = lab(a), lab(b)
    assert rmse_lab(a, b) == pytest.approx(rmse_lab_loop(la, lb), rel=1e-9)
    sel = rng.random((6, 5)) < 0.4
    assert rmse_lab(a, b, sel) == pytest.approx(rmse_lab_loop(la, lb, sel.tolist()), rel=1e-9)


def test_rmse_symmetric_and_empty_region(rng):
    a = rng.uniform(-1, 1, (4, 4, 3))
    b = rng.uniform(-1, 1, (4, 4, 3))
    assert rmse_lab(a, b) == rmse_lab(b, a)
    assert math.isnan(rmse_lab(a, b, np.zeros((4, 4), dtype=bool)))
    overall, inside, outside = region_rmse(a, b, np.zeros((4, 4)))
    assert math.isnan(inside) and outside == pytest.approx(overall)


def test_rmse_shape_checks():
    with pytest.raises(ValueError):
        rmse_lab(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        rmse_lab(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.ones((3, 3), dtype=bool))


def test_remove_shadow_handles_odd_sizes():
    g_f = zero_params(Generator(3, 1, 4))
    img = np.random.default_rng(0).uniform(-1, 1, (10, 13, 3))
    assert np.allclose(remove_shadow(g_f, img), img.astype(np.float32), atol=1e-6)


def _write_pairs(tmp_path, rng, n=3, missing=False):
    rows = []
    for i in range(n):
        truth = rng.integers(60, 250, (8, 8, 3), dtype=np.uint8)
        shadow = truth.copy()
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[2:6, 1:5] = 1
        shadow[mask == 1] = (shadow[mask == 1] * 0.5).astype(np.uint8)
        im.write_png(tmp_path / f"s{i}.png", shadow)
        if not (missing and i == 0):
            im.write_png(tmp_path / f"t{i}.png", truth)
        im.write_mask_png(tmp_path / f"m{i}.png", mask)
        rows.append((f"s{i}.png", f"t{i}.png", f"m{i}.png"))
    im.write_pairs(tmp_path / "pairs.tsv", rows)
    return im.read_pairs(tmp_path / "pairs.tsv")


def test_identity_generator_reproduces_baseline(tmp_path, rng):
    pairs = _write_pairs(tmp_path, rng)
    summary = evaluate(zero_params(Generator(3, 1, 4)), pairs, tmp_path / "out")
    assert summary["count"] == 3 and summary["skipped"] == 0
    for k in ("all", "shadow", "nonshadow"):
        assert summary[f"rmse_{k}"] == pytest.approx(summary[f"baseline_{k}"], abs=1e-12)
    assert summary["baseline_nonshadow"] == 0.0
    with open(tmp_path / "out" / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert set(rows[0]) == {"path", "rmse_all", "rmse_shadow", "rmse_nonshadow"}
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["mask_source"] == "truth"
    assert len(list((tmp_path / "out" / "pred").glob("*.png"))) == 3


def test_missing_truth_is_skipped_and_counted(tmp_path, rng):
    pairs = _write_pairs(tmp_path, rng, missing=True)
    summary = evaluate(zero_params(Generator(3, 1, 4)), pairs, tmp_path / "out")
    assert summary["count"] == 2 and summary["skipped"] == 1


def test_otsu_regions_without_truth_masks(tmp_path, rng):
    pairs = [im.EvalPair(p.shadow, p.truth) for p in _write_pairs(tmp_path, rng)]
    summary = evaluate(zero_params(Generator(3, 1, 4)), pairs, tmp_path / "out")
    assert summary["mask_source"] == "otsu"
    assert summary["rmse_nonshadow"] == 0.0
