import logging

import numpy as np
import pytest
from PIL import Image

from poisson_retinex.image_io import (
    DatasetError,
    ImageFormatError,
    PairedDataset,
    PairedSample,
    load_image,
    random_crop_pair,
    save_image,
    scan_paired_dataset,
)


def write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def test_load_mid_gray(tmp_path):
    write_png(tmp_path / "g.png", np.full((4, 4, 3), 128))
    img = load_image(tmp_path / "g.png")
    assert img.shape == (4, 4, 3)
    assert np.all(img == 128 / 255)


def test_load_grayscale_file_has_one_channel(tmp_path):
    write_png(tmp_path / "g.png", np.full((5, 6), 7))
    img = load_image(tmp_path / "g.png")
    assert img.shape == (5, 6, 1)


def test_roundtrip_is_idempotent(tmp_path):
    rng = np.random.default_rng(0)
    write_png(tmp_path / "a.png", rng.integers(0, 256, size=(9, 7, 3)))
    first = load_image(tmp_path / "a.png")
    save_image(first, tmp_path / "b.png")
    assert np.array_equal(load_image(tmp_path / "b.png"), first)


def test_text_file_is_rejected(tmp_path):
    p = tmp_path / "notes.png"
    p.write_text("not an image")
    with pytest.raises(ImageFormatError):
        load_image(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


def test_unsupported_raster_format(tmp_path):
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "x.bmp")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "x.bmp")


@pytest.mark.parametrize("value, code", [(0.0, 0), (1.0, 255), (0.5, 128)])
def test_save_quantization(tmp_path, value, code):
    save_image(np.full((3, 3, 3), value), tmp_path / "q.png")
    assert np.all(np.asarray(Image.open(tmp_path / "q.png")) == code)


def test_save_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        save_image(np.zeros((2, 2, 3)), blocker / "sub" / "img.png")


def _pair(h, w, seed=0):
    rng = np.random.default_rng(seed)
    low = rng.random((h, w, 3))
    return PairedSample(low, low * 2.0, "p")


def test_crop_identity_when_size_matches():
    s = _pair(128, 128)
    c = random_crop_pair(s, 128, seed=3)
    assert np.array_equal(c.low, s.low) and np.array_equal(c.high, s.high)


def test_crop_deterministic_and_aligned():
    s = _pair(40, 50)
    a = random_crop_pair(s, 16, 5, 2, 7)
    b = random_crop_pair(s, 16, 5, 2, 7)
    assert np.array_equal(a.low, b.low)
    assert np.array_equal(a.high, a.low * 2.0)
    assert a.low.shape == (16, 16, 3)


def test_crop_too_large():
    with pytest.raises(ValueError):
        random_crop_pair(_pair(128, 128), 256, seed=0)


def test_pair_shapes_must_match():
    with pytest.raises(ValueError):
        PairedSample(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), "bad")


def _layout(root, low_names, high_names):
    (root / "low").mkdir(parents=True)
    (root / "high").mkdir(parents=True)
    for n in low_names:
        write_png(root / "low" / f"{n}.png", np.zeros((8, 8, 3)))
    for n in high_names:
        write_png(root / "high" / f"{n}.png", np.full((8, 8, 3), 200))


def test_scan_intersection_warns(tmp_path, caplog):
    _layout(tmp_path, ["a", "b"], ["b", "c"])
    with caplog.at_level(logging.WARNING):
        ids = scan_paired_dataset(tmp_path / "low", tmp_path / "high")
    assert ids == ["b"]
    assert "a.png" in caplog.text and "c.png" in caplog.text


def test_scan_identical_listing_sorted(tmp_path):
    names = ["z", "m", "a", "q"]
    _layout(tmp_path, names, names)
    assert scan_paired_dataset(tmp_path / "low", tmp_path / "high") == sorted(names)


def test_scan_disjoint(tmp_path):
    _layout(tmp_path, ["a"], ["b"])
    with pytest.raises(DatasetError):
        scan_paired_dataset(tmp_path / "low", tmp_path / "high")


def test_dataset_loads_pairs(tmp_path):
    _layout(tmp_path, ["x", "y"], ["x", "y"])
    ds = PairedDataset(tmp_path)
    assert len(ds) == 2
    s = ds.load("x")
    assert s.low.max() == 0 and s.high.min() == 200 / 255
