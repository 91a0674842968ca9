"""Manifests, splits, preprocessing, batching, and the synthetic generator."""

import csv
import os

import numpy as np
import pytest

from difl import data
from difl.data import (Batch, Dataset, SynthConfig, assign_domain_labels,
                       batch_iter, bilinear_resize, load_manifest,
                       mixed_batch_iter, preprocess, read_image, split_80_20,
                       synth_two_domain, write_pgm)
from difl.errors import (ConfigError, ContractError, DecodeError,
                         ManifestError)


def bilinear_oracle(img, out_h, out_w):
    """Independent per-pixel reimplementation of the resize convention."""
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * in_h / out_h - 0.5, 0), in_h - 1)
            sx = min(max((j + 0.5) * in_w / out_w - 0.5, 0), in_w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            fy, fx = sy - y0, sx - x0
            top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
            bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
            out[i, j] = (1 - fy) * top + fy * bot
    return out


def make_manifest(root, entries, header=("path", "label")):
    os.makedirs(root / "images", exist_ok=True)
    rng = np.random.default_rng(0)
    rows = []
    for i, label in enumerate(entries):
        rel = f"images/im_{i:04d}.pgm"
        write_pgm(root / rel, rng.integers(0, 256, (20, 24), dtype=np.uint8))
        rows.append((rel, label))
    path = root / "manifest.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


# ------------------------------------------------------------ preprocessing

@pytest.mark.parametrize("in_shape,out_shape", [((20, 24), (64, 64)),
                                                ((100, 80), (64, 64)),
                                                ((64, 64), (64, 64)),
                                                ((7, 9), (16, 16))])
def test_bilinear_resize_matches_oracle(in_shape, out_shape):
    rng = np.random.default_rng(sum(in_shape))
    img = rng.uniform(0, 255, in_shape)
    got = bilinear_resize(img, *out_shape)
    np.testing.assert_allclose(got, bilinear_oracle(img, *out_shape),
                               rtol=0, atol=1e-9)


def test_bilinear_identity_at_same_size():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 255, (32, 32))
    np.testing.assert_allclose(bilinear_resize(img, 32, 32), img,
                               rtol=0, atol=1e-12)


def test_preprocess_standardizes():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (48, 40), dtype=np.uint8)
    out = preprocess(img, extent=64)
    assert out.shape == (1, 64, 64)
    assert out.dtype == np.float64
    assert abs(out.mean()) < 1e-9
    assert abs(out.var() - 1.0) < 1e-6


def test_preprocess_constant_image_maps_to_zeros():
    out = preprocess(np.full((30, 30), 77, dtype=np.uint8), extent=16)
    np.testing.assert_array_equal(out, np.zeros((1, 16, 16)))


def test_preprocess_inversion_is_exact_negation():
    # intensity inversion commutes with resize/scale and flips the sign of
    # the standardized image; this is what makes the inversion shift a clean
    # stress test for feature invariance
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (50, 70), dtype=np.uint8)
    a = preprocess(img, extent=32)
    b = preprocess((255 - img).astype(np.uint8), extent=32)
    np.testing.assert_allclose(b, -a, rtol=0, atol=1e-12)


def test_preprocess_rejects_bad_input():
    with pytest.raises(DecodeError):
        preprocess(np.zeros((3, 3, 3), dtype=np.uint8))


# ------------------------------------------------------------------ file IO

def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, (17, 23), dtype=np.uint8)
    p = tmp_path / "x.pgm"
    write_pgm(p, img)
    np.testing.assert_array_equal(read_image(p), img)


def test_read_image_rejects_garbage(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not an image")
    with pytest.raises(DecodeError, match="bad.png"):
        read_image(p)


# ---------------------------------------------------------------- manifests

def test_load_manifest_and_counts(tmp_path):
    path = make_manifest(tmp_path, [0, 1, 1, 0, 1])
    ds = load_manifest(path, extent=16)
    assert len(ds) == 5
    assert ds.class_counts() == (2, 3)
    np.testing.assert_array_equal(ds.labels(), [0, 1, 1, 0, 1])
    t = ds.tensor(0)
    assert t.shape == (1, 16, 16)
    assert ds.tensor(0) is t  # cached


def test_load_manifest_missing_file():
    with pytest.raises(OSError):
        load_manifest("/nonexistent/manifest.csv")


def test_load_manifest_bad_header(tmp_path):
    path = make_manifest(tmp_path, [0, 1], header=("file", "label"))
    with pytest.raises(ManifestError, match="header"):
        load_manifest(path)


def test_load_manifest_bad_label_names_line(tmp_path):
    path = make_manifest(tmp_path, [0, 2, 1])
    with pytest.raises(ManifestError, match=":3"):
        load_manifest(path)


def test_undecodable_image_raises_at_access(tmp_path):
    path = make_manifest(tmp_path, [0, 1])
    (tmp_path / "images" / "im_0000.pgm").write_bytes(b"broken")
    ds = load_manifest(path)  # decode is lazy, load succeeds
    with pytest.raises(DecodeError, match="im_0000"):
        ds.tensor(0)


def test_reference_scale_manifest(tmp_path):
    # a manifest at the scale of the largest screening archive used for the
    # published comparisons: 662 films, 326 negative / 336 positive
    entries = [0] * 326 + [1] * 336
    root = tmp_path / "china"
    os.makedirs(root / "images")
    rows = [(f"images/x{i}.pgm", lab) for i, lab in enumerate(entries)]
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label"])
        w.writerows(rows)
    ds = load_manifest(root / "manifest.csv")
    assert len(ds) == 662
    assert ds.class_counts() == (326, 336)
    sp = split_80_20(ds, seed=0)
    assert (len(sp.train), len(sp.test)) == (529, 133)


# ------------------------------------------------------------------- splits

def test_split_is_deterministic_partition(tmp_path):
    ds = load_manifest(make_manifest(tmp_path, [0, 1] * 10))
    a = split_80_20(ds, seed=5)
    b = split_80_20(ds, seed=5)
    c = split_80_20(ds, seed=6)
    ia = [a.train.path(i) for i in range(len(a.train))]
    ib = [b.train.path(i) for i in range(len(b.train))]
    ic = [c.train.path(i) for i in range(len(c.train))]
    assert ia == ib
    assert ia != ic
    train_set = set(ia)
    test_set = {a.test.path(i) for i in range(len(a.test))}
    assert not train_set & test_set
    assert len(train_set | test_set) == 20
    assert (len(a.train), len(a.test)) == (16, 4)


def test_split_rejects_tiny_dataset(tmp_path):
    ds = load_manifest(make_manifest(tmp_path, [0]))
    with pytest.raises(ConfigError):
        split_80_20(ds, seed=0)


# ----------------------------------------------------------- domain tagging

def test_assign_domain_labels_masks_target(tmp_path):
    src = load_manifest(make_manifest(tmp_path / "s", [0, 1, 1]))
    tgt = load_manifest(make_manifest(tmp_path / "t", [1, 0]))
    pair = assign_domain_labels(src, tgt)
    assert pair.source.domain == 0 and pair.target.domain == 1
    assert pair.source.labels() is not None
    assert pair.target.labels() is None
    assert pair.target.label(0) is None  # no per-item leak either
    assert len(pair.target) == 2


# ----------------------------------------------------------------- batching

def test_batch_iter_covers_every_example_once(tmp_path):
    ds = load_manifest(make_manifest(tmp_path, [0, 1] * 5), extent=16)
    batches = list(batch_iter(ds, 4, seed=1, epoch=0))
    assert [len(b) for b in batches] == [4, 4, 2]  # final short batch
    seen = np.concatenate([b.y for b in batches])
    assert len(seen) == 10 and seen.sum() == 5
    xs = np.concatenate([b.x for b in batches])
    assert xs.shape == (10, 1, 16, 16)
    # exactly once per epoch: tensors are cache-identical, so compare bytes
    blobs = sorted(xs[i].tobytes() for i in range(10))
    want = sorted(ds.tensor(i).tobytes() for i in range(10))
    assert blobs == want


def test_batch_iter_seed_epoch_control(tmp_path):
    ds = load_manifest(make_manifest(tmp_path, [0, 1] * 8), extent=16)

    def order(seed, epoch):
        return tuple(b.x.tobytes() for b in batch_iter(ds, 4, seed, epoch))

    assert order(3, 0) == order(3, 0)
    assert order(3, 0) != order(3, 1)
    assert order(3, 0) != order(4, 0)


def test_mixed_batches_are_balanced_and_label_free(tmp_path):
    src = load_manifest(make_manifest(tmp_path / "s", [0, 1] * 6), extent=16)
    tgt = load_manifest(make_manifest(tmp_path / "t", [1, 0] * 5), extent=16)
    pair = assign_domain_labels(src, tgt)
    batches = list(mixed_batch_iter(pair, 6, seed=0, epoch=0))
    for b in batches:
        assert b.y is None
        assert set(np.unique(b.d)) == {0.0, 1.0}
    # n=6 -> 3 + 3 per batch; 12 source / 10 target -> 4 batches, last short
    assert [len(b) for b in batches] == [6, 6, 6, 4]
    assert [int(b.d.sum()) for b in batches] == [3, 3, 3, 1]
    # each side consumed without replacement
    assert sum(int(b.d.sum()) for b in batches) == 10
    assert sum(int((1 - b.d).sum()) for b in batches) == 12


def test_mixed_batch_iter_rejects_tiny_n(tmp_path):
    src = load_manifest(make_manifest(tmp_path / "s", [0, 1]))
    tgt = load_manifest(make_manifest(tmp_path / "t", [0, 1]))
    with pytest.raises(ConfigError):
        next(mixed_batch_iter(assign_domain_labels(src, tgt), 1, 0, 0))


# ------------------------------------------------------------------- synth

def test_synth_materializes_and_reloads(tmp_path):
    cfg = SynthConfig(neg_count=4, pos_count=6, extent=32, seed=9)
    a, b = synth_two_domain(cfg, tmp_path)
    assert len(a) == 10 and len(b) == 10
    assert a.class_counts() == (4, 6)
    assert b.class_counts() == (4, 6)
    assert os.path.exists(tmp_path / "synthA" / "manifest.csv")
    assert a.tensor(0).shape == (1, 32, 32)
    reloaded = load_manifest(tmp_path / "synthB" / "manifest.csv", extent=32)
    assert len(reloaded) == 10


def test_synth_is_deterministic(tmp_path):
    cfg = SynthConfig(neg_count=3, pos_count=3, extent=32, seed=4)
    a1, _ = synth_two_domain(cfg, tmp_path / "r1")
    a2, _ = synth_two_domain(cfg, tmp_path / "r2")
    for i in range(len(a1)):
        assert a1.image(i).tobytes() == a2.image(i).tobytes()


def test_synth_inversion_flips_mean_intensity(tmp_path):
    cfg = SynthConfig(neg_count=40, pos_count=40, extent=32, invert=True, noise_sigma=0.0,
                      jitter_px=0, contrast=1.0, seed=2)
    a, b = synth_two_domain(cfg, tmp_path)
    mean_a = np.mean([a.image(i).mean() for i in range(len(a))]) / 255.0
    mean_b = np.mean([b.image(i).mean() for i in range(len(b))]) / 255.0
    assert abs(mean_b - (1.0 - mean_a)) < 0.02


def test_synth_null_shift_domains_match_in_distribution(tmp_path):
    cfg = SynthConfig(neg_count=60, pos_count=60, extent=32, invert=False, noise_sigma=0.0,
                      jitter_px=0, contrast=1.0, seed=3)
    a, b = synth_two_domain(cfg, tmp_path)
    ma = np.mean([a.image(i).mean() for i in range(len(a))])
    mb = np.mean([b.image(i).mean() for i in range(len(b))])
    assert abs(ma - mb) < 4.0  # same process, different draws


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(neg_count=0)
    with pytest.raises(ConfigError):
        SynthConfig(pos_count=0)
    with pytest.raises(ConfigError):
        SynthConfig(amp=0.0)
    with pytest.raises(ConfigError):
        SynthConfig(noise_sigma=-0.1)
    with pytest.raises(ConfigError):
        SynthConfig(contrast=0.0)
