import numpy as np
import pytest

from unshadow import images as im
from unshadow.masks import make_mask
from unshadow.synth import (
    BACKGROUNDS,
    SynthConfig,
    rasterize,
    read_synth_config,
    render_background,
    synth_dataset,
    synth_truth_mask,
)


def iou(a, b):
    a, b = a.astype(bool), b.astype(bool)
    union = (a | b).sum()
    return 1.0 if union == 0 else (a & b).sum() / union


def load_pair(root, name):
    shadow = im.read_png(root / "images" / name)
    truth = im.read_png(root / "truth" / "free" / name)
    return shadow, truth


def test_counts_and_layout(tmp_path):
    synth_dataset(SynthConfig(n_shadow=8, n_shadowfree=4, image_size=32, seed=1), tmp_path)
    lines = (tmp_path / "manifest.tsv").read_text().splitlines()
    assert sum(l.startswith("s\t") for l in lines) == 8
    assert sum(l.startswith("f\t") for l in lines) == 4
    assert all("truth" not in l for l in lines)
    pairs = im.read_pairs(tmp_path / "truth" / "pairs.tsv")
    assert len(pairs) == 8 and all(p.shadow.exists() and p.truth.exists() and p.mask.exists() for p in pairs)


def test_same_seed_gives_identical_bytes(tmp_path):
    cfg = SynthConfig(n_shadow=4, n_shadowfree=3, image_size=32, penumbra_width=2, noise_std=2, seed=7)
    synth_dataset(cfg, tmp_path / "a")
    synth_dataset(cfg, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_domain_streams_are_independent(tmp_path):
    synth_dataset(SynthConfig(n_shadow=3, n_shadowfree=2, image_size=32, seed=5), tmp_path / "a")
    synth_dataset(SynthConfig(n_shadow=3, n_shadowfree=6, image_size=32, seed=5), tmp_path / "b")
    for i in range(3):
        name = f"images/s_{i:04d}.png"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flat_background_mask_recovered_exactly(tmp_path):
    cfg = SynthConfig(n_shadow=10, n_shadowfree=1, image_size=48, background="flat-color",
                      attenuation=(0.4, 0.6), noise_std=0, seed=3)
    synth_dataset(cfg, tmp_path)
    for i in range(10):
        name = f"s_{i:04d}.png"
        shadow, truth = load_pair(tmp_path, name)
        mask = make_mask(im.encode_image(shadow), im.encode_image(truth))
        assert np.array_equal(mask, synth_truth_mask(tmp_path / "images" / name))


def test_hard_edges_darken_exactly_inside_mask(tmp_path):
    synth_dataset(SynthConfig(n_shadow=12, n_shadowfree=1, image_size=32, noise_std=0, seed=9), tmp_path)
    for i in range(12):
        name = f"s_{i:04d}.png"
        shadow, truth = load_pair(tmp_path, name)
        mask = im.read_mask_png(tmp_path / "truth" / "masks" / name).astype(bool)
        assert mask.any()
        assert (shadow[mask] < truth[mask]).all()
        assert np.array_equal(shadow[~mask], truth[~mask])


def test_truth_mask_matches_rasterized_geometry(tmp_path):
    synth_dataset(SynthConfig(n_shadow=4, n_shadowfree=1, image_size=32, seed=2), tmp_path)
    for i in range(4):
        name = f"s_{i:04d}.png"
        stored = im.read_mask_png(tmp_path / "truth" / "masks" / name)
        regenerated = synth_truth_mask(tmp_path / "images" / name)
        assert np.array_equal(stored, regenerated)
        assert stored.sum() == regenerated.sum() > 0


def test_no_attenuation_gives_empty_mask(tmp_path):
    synth_dataset(SynthConfig(n_shadow=2, n_shadowfree=1, image_size=16, attenuation=(1.0, 1.0), noise_std=0, seed=0), tmp_path)
    for i in range(2):
        name = f"s_{i:04d}.png"
        assert synth_truth_mask(tmp_path / "images" / name).sum() == 0
        shadow, truth = load_pair(tmp_path, name)
        assert np.array_equal(shadow, truth)


def test_mask_iou_on_hard_edges(tmp_path):
    synth_dataset(SynthConfig(n_shadow=20, n_shadowfree=1, image_size=64, seed=4), tmp_path)
    scores = []
    for i in range(20):
        name = f"s_{i:04d}.png"
        shadow, truth = load_pair(tmp_path, name)
        mask = make_mask(im.encode_image(shadow), im.encode_image(truth))
        scores.append(iou(mask, synth_truth_mask(tmp_path / "images" / name)))
    assert np.mean(scores) >= 0.95


def test_non_synthetic_image_rejected(tmp_path):
    im.write_png(tmp_path / "x.png", np.zeros((8, 8, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        synth_truth_mask(tmp_path / "x.png")


@pytest.mark.parametrize("kw", [
    {"n_shadow": 0}, {"image_size": 30}, {"background": "plasma"}, {"shadow_shape": "star"},
    {"attenuation": (0.0, 0.5)}, {"attenuation": (0.7, 0.5)}, {"penumbra_width": -1},
])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


@pytest.mark.parametrize("kind", BACKGROUNDS)
def test_backgrounds_in_range(kind):
    bg = render_background(kind, 32, np.random.default_rng(0))
    assert bg.shape == (32, 32, 3)
    assert bg.min() >= 20 and bg.max() <= 255


def test_rasterize_empty_geometry():
    assert rasterize(None, 8).sum() == 0


def test_read_config(tmp_path):
    (tmp_path / "c.txt").write_text("n_shadow=3\nbackground=flat-color,checker\nattenuation=0.3,0.5\n")
    cfg = read_synth_config(tmp_path / "c.txt", seed=4)
    assert cfg.n_shadow == 3 and cfg.background == ["flat-color", "checker"]
    assert cfg.attenuation == (0.3, 0.5) and cfg.seed == 4
    (tmp_path / "bad.txt").write_text("colour=red\n")
    with pytest.raises(ValueError):
        read_synth_config(tmp_path / "bad.txt")


def test_default_renders_are_never_constant(tmp_path):
    # a perfectly flat image gives instance norm zero variance and breaks training
    synth_dataset(SynthConfig(n_shadow=1, n_shadowfree=8, image_size=16, background="flat-color", seed=1), tmp_path)
    for p in (tmp_path / "images").glob("f_*.png"):
        assert im.read_png(p).std() > 0
