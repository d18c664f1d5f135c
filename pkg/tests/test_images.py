import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from unshadow import images as im


def test_encode_endpoints_and_midpoint():
    raw = np.array([[[0, 255, 128]]], dtype=np.uint8)
    enc = im.encode_image(raw)
    assert enc[0, 0, 0] == -1.0
    assert enc[0, 0, 1] == 1.0
    # 128 / 127.5 - 1
    assert enc[0, 0, 2] == pytest.approx(0.00392156862745098, abs=1e-15)


def test_encode_rejects_wrong_channel_count():
    with pytest.raises(ValueError, match="3 channels"):
        im.encode_image(np.zeros((4, 4, 4), dtype=np.uint8))
    with pytest.raises(ValueError, match="3 channels"):
        im.encode_image(np.zeros((4, 4), dtype=np.uint8))


def test_decode_examples():
    out = im.decode_image(np.array([[[-1.0, 1.0, 0.0]]]))
    assert out.tolist() == [[[0, 255, 128]]]


def test_decode_clamps_out_of_range():
    assert im.decode_image(np.array([[[-3.0, 7.0, 1.0]]])).tolist() == [[[0, 255, 255]]]


def test_round_trip_exhaustive():
    raw = np.arange(256, dtype=np.uint8).reshape(1, -1, 1).repeat(3, axis=2)
    assert np.array_equal(im.decode_image(im.encode_image(raw)), raw)


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
def test_round_trip_random_grids(raw):
    assert np.array_equal(im.decode_image(im.encode_image(raw)), raw)


@pytest.mark.parametrize("h,w", [(8, 8), (9, 10), (31, 17), (4, 7)])
def test_crop_to_multiple_centers(h, w):
    img = np.arange(h * w * 3).reshape(h, w, 3)
    out = im.crop_to_multiple(img)
    assert out.shape[0] % 4 == 0 and out.shape[1] % 4 == 0
    assert out.shape[0] > h - 4 and out.shape[1] > w - 4


def test_pad_to_multiple_then_crop_is_identity():
    img = np.random.default_rng(0).random((10, 13, 3))
    padded, (h, w) = im.pad_to_multiple(img)
    assert padded.shape[:2] == (12, 16)
    assert np.array_equal(padded[:h, :w], img)


def test_check_mask():
    assert im.check_mask(np.array([[0, 1], [1, 0]])).dtype == np.uint8
    with pytest.raises(ValueError):
        im.check_mask(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        im.check_mask(np.zeros((2, 2)), shape=(3, 3))


def test_png_and_mask_round_trip(tmp_path, rng):
    raw = rng.integers(0, 256, size=(8, 12, 3), dtype=np.uint8)
    im.write_png(tmp_path / "a.png", raw)
    assert np.array_equal(im.read_png(tmp_path / "a.png"), raw)
    mask = rng.integers(0, 2, size=(8, 12)).astype(np.uint8)
    im.write_mask_png(tmp_path / "m.png", mask)
    assert set(np.unique(im.read_png(tmp_path / "m.png"))) <= {0, 255}
    assert np.array_equal(im.read_mask_png(tmp_path / "m.png"), mask)


def test_manifest_round_trip(tmp_path):
    im.write_manifest(tmp_path / "m.tsv", ["images/a.png", "images/b.png"], ["images/c.png"])
    ds = im.read_manifest(tmp_path / "m.tsv")
    assert ds.shadow_images == [tmp_path / "images/a.png", tmp_path / "images/b.png"]
    assert ds.shadowfree_images == [tmp_path / "images/c.png"]
    assert ds.paired_truth == {}


def test_manifest_rejects_bad_domain(tmp_path):
    (tmp_path / "m.tsv").write_text("x\ta.png\n")
    with pytest.raises(ValueError, match="m.tsv:1"):
        im.read_manifest(tmp_path / "m.tsv")


def test_dataset_validate_requires_both_domains():
    with pytest.raises(ValueError):
        im.UnpairedDataset([], []).validate()
    with pytest.raises(ValueError):
        im.UnpairedDataset(["a"], []).validate()


def test_pairs_manifest(tmp_path):
    im.write_pairs(tmp_path / "p.tsv", [("s.png", "t.png"), ("s2.png", "t2.png", "m2.png")])
    pairs = im.read_pairs(tmp_path / "p.tsv")
    assert pairs[0] == im.EvalPair(tmp_path / "s.png", tmp_path / "t.png", None)
    assert pairs[1].mask == tmp_path / "m2.png"
