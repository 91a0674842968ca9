"""Datasets: manifest loading, deterministic splits, image preprocessing,
batch iteration, and the synthetic two-domain generator.

A dataset is a CSV manifest with header ``path,label`` (label 0 or 1,
paths relative to the manifest) plus 8-bit grayscale images. Images are
decoded lazily and their preprocessed tensors cached per dataset.

Preprocessing pins its own bilinear resize (half-pixel centers, edge
clamped, no antialiasing) so results do not depend on any image library's
resampling choices; Pillow is used only to decode files.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, ContractError, DecodeError, ManifestError

SOURCE_DOMAIN = 0
TARGET_DOMAIN = 1

_VAR_FLOOR = 1e-6


# ------------------------------------------------------------ preprocessing

def bilinear_resize(img, out_h, out_w):
    """Resize a 2-d float array with half-pixel-center sampling.

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped
    to the valid range; the four neighbors are blended bilinearly. No
    antialiasing prefilter is applied, also when shrinking.
    """
    in_h, in_w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    # lerp form: exact for constant neighborhoods (no weight round-off)
    top = a + wx * (b - a)
    bot = c + wx * (d - c)
    return top + wy * (bot - top)


def preprocess(image, extent=64):
    """uint8 (H, W) -> standardized float64 (1, extent, extent).

    Resize to extent x extent, scale to [0, 1], then per-image standardize
    to mean 0 / variance 1 with a 1e-6 variance floor (a constant image
    maps to all zeros rather than dividing by ~0).
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise DecodeError(f"expected a 2-d grayscale image, got shape {image.shape}")
    if extent < 1:
        raise ContractError(f"extent must be >= 1, got {extent}")
    arr = bilinear_resize(image.astype(np.float64), extent, extent) / 255.0
    if arr.min() == arr.max():
        # exactly constant: centered value is 0 regardless of the floor, and
        # bypassing the arithmetic avoids amplified round-off dust
        return np.zeros((1, extent, extent))
    mu = arr.mean()
    var = arr.var()
    return ((arr - mu) / math.sqrt(max(var, _VAR_FLOOR)))[None]


# ------------------------------------------------------------------ file IO

def write_pgm(path, img):
    """Write a uint8 2-d array as binary PGM (P5)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_image(path):
    """Decode an image file to a uint8 (H, W) array.

    Non-grayscale inputs are converted with Pillow's luminance transform;
    unreadable files raise DecodeError naming the path.
    """
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


# ----------------------------------------------------------------- datasets

class Dataset:
    """Ordered labeled examples with lazily decoded, cached image tensors."""

    domain = None

    def __init__(self, name, paths, labels, extent=64):
        if len(paths) != len(labels):
            raise ContractError("paths and labels differ in length")
        self.name = name
        self.extent = int(extent)
        self._paths = list(paths)
        self._labels = list(labels)
        self._cache = {}

    def __len__(self):
        return len(self._paths)

    def path(self, i):
        return self._paths[i]

    def label(self, i):
        return self._labels[i]

    def labels(self):
        if any(l is None for l in self._labels):
            return None
        return np.array(self._labels, dtype=np.float64)

    def class_counts(self):
        """(negatives, positives) over labeled examples."""
        neg = sum(1 for l in self._labels if l == 0)
        pos = sum(1 for l in self._labels if l == 1)
        return neg, pos

    def image(self, i):
        return read_image(self._paths[i])

    def tensor(self, i):
        got = self._cache.get(i)
        if got is None:
            got = preprocess(self.image(i), self.extent)
            self._cache[i] = got
        return got

    def subset(self, indices, name=None):
        return Subset(self, indices, name)


class Subset:
    """An index view onto a Dataset; shares the parent's tensor cache."""

    domain = None

    def __init__(self, base, indices, name=None):
        self._base = base
        self._indices = np.asarray(indices, dtype=np.intp)
        if len(self._indices) and (self._indices.min() < 0
                                   or self._indices.max() >= len(base)):
            raise ContractError("subset indices out of range")
        self.name = name if name is not None else f"{base.name}-subset"

    @property
    def extent(self):
        return self._base.extent

    def __len__(self):
        return len(self._indices)

    def path(self, i):
        return self._base.path(self._indices[i])

    def label(self, i):
        return self._base.label(self._indices[i])

    def labels(self):
        labs = [self.label(i) for i in range(len(self))]
        if any(l is None for l in labs):
            return None
        return np.array(labs, dtype=np.float64)

    def class_counts(self):
        labs = [self.label(i) for i in range(len(self))]
        return sum(1 for l in labs if l == 0), sum(1 for l in labs if l == 1)

    def image(self, i):
        return self._base.image(self._indices[i])

    def tensor(self, i):
        return self._base.tensor(self._indices[i])

    def subset(self, indices, name=None):
        return Subset(self._base, self._indices[np.asarray(indices, dtype=np.intp)],
                      name)


class TaggedView:
    """A dataset wrapper carrying a domain tag; optionally hides labels.

    The hidden-label form is the training view of the target domain: class
    labels are simply not reachable through it.
    """

    def __init__(self, base, domain, expose_labels):
        self._base = base
        self.domain = int(domain)
        self._expose = bool(expose_labels)
        self.name = base.name

    @property
    def extent(self):
        return self._base.extent

    def __len__(self):
        return len(self._base)

    def label(self, i):
        return self._base.label(i) if self._expose else None

    def labels(self):
        return self._base.labels() if self._expose else None

    def tensor(self, i):
        return self._base.tensor(i)


def load_manifest(path, extent=64, name=None):
    """Read a ``path,label`` CSV manifest into a Dataset.

    Image paths are resolved relative to the manifest's directory. Labels
    must be the literals 0 or 1; anything else raises ManifestError with the
    offending line number.
    """
    path = os.fspath(path)
    root = os.path.dirname(os.path.abspath(path))
    if name is None:
        name = os.path.basename(root)
    paths, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if [c.strip() for c in header] != ["path", "label"]:
            raise ManifestError(
                f"{path}:1: expected header 'path,label', got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ManifestError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            rel, lab = row[0].strip(), row[1].strip()
            if lab not in ("0", "1"):
                raise ManifestError(f"{path}:{lineno}: label must be 0 or 1, got {lab!r}")
            paths.append(os.path.join(root, rel))
            labels.append(int(lab))
    return Dataset(name, paths, labels, extent=extent)


def split_80_20(ds, seed):
    """Deterministic uniform 80:20 split (not stratified).

    A seeded permutation of the index range is drawn; the first floor(0.8 n)
    entries form the train subset, the rest the test subset.
    """
    n = len(ds)
    if n < 2:
        raise ConfigError(f"cannot split a dataset of {n} examples")
    perm = np.random.default_rng(int(seed)).permutation(n)
    k = (8 * n) // 10
    return SplitPair(
        train=ds.subset(perm[:k], f"{ds.name}-train"),
        test=ds.subset(perm[k:], f"{ds.name}-test"),
        seed=int(seed),
    )


@dataclass(frozen=True)
class SplitPair:
    train: Subset
    test: Subset
    seed: int
    ratio: float = 0.8


def assign_domain_labels(source, target):
    """Pair a labeled source dataset with an unlabeled-for-training target.

    Every source example is tagged domain 0 with labels exposed; every
    target example is tagged domain 1 with class labels hidden from the
    returned view.
    """
    if len(source) == 0 or len(target) == 0:
        raise ConfigError("both datasets must be non-empty")
    return DomainPair(
        source=TaggedView(source, SOURCE_DOMAIN, expose_labels=True),
        target=TaggedView(target, TARGET_DOMAIN, expose_labels=False),
    )


@dataclass(frozen=True)
class DomainPair:
    source: TaggedView
    target: TaggedView


# ----------------------------------------------------------------- batching

@dataclass
class Batch:
    """A stacked minibatch: x (B, C, H, W); y and d are (B,) or absent."""

    x: np.ndarray
    y: np.ndarray | None
    d: np.ndarray | None

    def __len__(self):
        return self.x.shape[0]


def _stack(view, idxs):
    return np.stack([view.tensor(int(i)) for i in idxs])


def _labels_of(view, idxs):
    labs = [view.label(int(i)) for i in idxs]
    if any(l is None for l in labs):
        return None
    return np.array(labs, dtype=np.float64)


def batch_iter(ds, n, seed, epoch):
    """Yield shuffled batches of ``n`` examples (final batch may be short).

    The permutation is a deterministic function of (seed, epoch): every
    example appears exactly once per epoch, without replacement.
    """
    if n < 1:
        raise ConfigError(f"batch size must be >= 1, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)]))
    perm = rng.permutation(len(ds))
    dom = getattr(ds, "domain", None)
    for lo in range(0, len(ds), n):
        idxs = perm[lo:lo + n]
        d = None if dom is None else np.full(len(idxs), float(dom))
        yield Batch(x=_stack(ds, idxs), y=_labels_of(ds, idxs), d=d)


def mixed_batch_iter(pair, n, seed, epoch):
    """Yield domain-balanced batches from a DomainPair.

    Each batch takes n - n//2 source and n//2 target examples, drawn without
    replacement per epoch from independent (seed, epoch)-derived shuffles.
    Iteration stops when either side is exhausted; the final batch may be
    short but always contains both domains. Target labels are not carried.
    """
    if n < 2:
        raise ConfigError(f"mixed batches need n >= 2, got {n}")
    sh = n - n // 2
    th = n // 2
    rs = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 0]))
    rt = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 1]))
    ps = rs.permutation(len(pair.source))
    pt = rt.permutation(len(pair.target))
    nb = min(-(-len(ps) // sh), -(-len(pt) // th))
    for i in range(nb):
        si = ps[i * sh:(i + 1) * sh]
        ti = pt[i * th:(i + 1) * th]
        x = np.concatenate([_stack(pair.source, si), _stack(pair.target, ti)])
        d = np.concatenate([np.full(len(si), float(SOURCE_DOMAIN)),
                            np.full(len(ti), float(TARGET_DOMAIN))])
        yield Batch(x=x, y=None, d=d)


# ------------------------------------------------------ synthetic two-domain

@dataclass(frozen=True)
class SynthConfig:
    """Controls the synthetic two-domain image generator.

    Domain A draws clean images; domain B draws from the same class-
    conditional process and then applies the configured appearance shift
    (translation jitter, contrast scaling, additive noise, intensity
    inversion, in that order). With jitter_px=0, contrast=1, noise_sigma=0
    and invert off, the two domains are identically distributed.
    """

    neg_count: int = 100
    pos_count: int = 400
    extent: int = 64
    invert: bool = True
    noise_sigma: float = 0.15
    jitter_px: int = 3
    contrast: float = 1.0
    amp: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.neg_count < 1:
            raise ConfigError(f"neg_count must be >= 1, got {self.neg_count}")
        if self.pos_count < 1:
            raise ConfigError(f"pos_count must be >= 1, got {self.pos_count}")
        if self.extent < 16:
            raise ConfigError(f"extent must be >= 16, got {self.extent}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.jitter_px < 0:
            raise ConfigError(f"jitter_px must be >= 0, got {self.jitter_px}")
        if self.contrast <= 0:
            raise ConfigError(f"contrast must be > 0, got {self.contrast}")
        if self.amp <= 0 or self.amp > 1.0:
            raise ConfigError(f"amp must be in (0, 1], got {self.amp}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def _synth_image(cfg, cls, domain, rng):
    """One class-conditional image, optionally with the domain-B shift.

    Class 0 shows one blob, class 1 two well-separated blobs. Positions
    jitter freely in both domains, so blob count is the only reliable class
    cue. Count is a geometric property that survives the appearance shift;
    raw intensity statistics do not. Classes must not be mirror images of
    each other: intensity inversion composed with standardization is an
    exact sign flip, and with mirror-symmetric classes a domain aligner
    could map each class onto the other while matching the feature
    distribution perfectly.

    Per-image blob amplitude varies twofold, so total intensity forms one
    contiguous range across the two classes instead of two separated
    lumps: a one-blob image at full amplitude carries the same ink as a
    two-blob image at half amplitude. Class counts are deliberately
    unequal (see pos_count/neg_count defaults): with equal priors an
    intensity-inverting shift admits a feature-space alignment that maps
    each class onto the other while matching every marginal statistic,
    and the class-swapped solution scores worse than chance downstream.
    Unequal priors make the swap detectable from unlabeled marginals.

    Translation jitter wraps around the border; blob centers stay in the
    middle half of the extent, so only faint gaussian tails ever wrap.
    """
    e = cfg.extent
    yy, xx = np.mgrid[0:e, 0:e].astype(np.float64)
    img = np.full((e, e), 0.15)
    radius = e / 8
    a = cfg.amp * rng.uniform(0.5, 1.0)

    def bump(c):
        return a * np.exp(-((yy - c[0]) ** 2 + (xx - c[1]) ** 2)
                          / (2 * radius ** 2))

    lo, hi = 0.25 * e, 0.75 * e
    c0 = rng.uniform(lo, hi, size=2)
    img += bump(c0)
    if cls == 1:
        c1 = rng.uniform(lo, hi, size=2)
        while np.hypot(*(c1 - c0)) < 0.30 * e:
            c1 = rng.uniform(lo, hi, size=2)
        img += bump(c1)
    if domain == TARGET_DOMAIN:
        if cfg.jitter_px:
            dy, dx = rng.integers(-cfg.jitter_px, cfg.jitter_px + 1, size=2)
            img = np.roll(np.roll(img, int(dy), axis=0), int(dx), axis=1)
        if cfg.contrast != 1.0:
            m = img.mean()
            img = (img - m) * cfg.contrast + m
        if cfg.noise_sigma:
            img += rng.normal(0.0, cfg.noise_sigma, (e, e))
        if cfg.invert:
            img = 1.0 - img
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def synth_two_domain(cfg, outdir):
    """Materialize the two synthetic domains under ``outdir``.

    Writes outdir/synthA and outdir/synthB, each holding manifest.csv plus
    an images/ directory of PGM files, and returns the two loaded Datasets.
    Output is a deterministic function of the config.
    """
    outdir = os.fspath(outdir)
    rng = np.random.default_rng(int(cfg.seed))
    datasets = []
    for domain, dname in ((SOURCE_DOMAIN, "synthA"), (TARGET_DOMAIN, "synthB")):
        droot = os.path.join(outdir, dname)
        os.makedirs(os.path.join(droot, "images"), exist_ok=True)
        rows = []
        for cls, count in ((0, cfg.neg_count), (1, cfg.pos_count)):
            tag = "pos" if cls == 1 else "neg"
            for j in range(count):
                rel = os.path.join("images", f"{tag}_{j:04d}.pgm")
                write_pgm(os.path.join(droot, rel),
                          _synth_image(cfg, cls, domain, rng))
                rows.append((rel, cls))
        manifest = os.path.join(droot, "manifest.csv")
        with open(manifest, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label"])
            writer.writerows(rows)
        datasets.append(load_manifest(manifest, extent=cfg.extent))
    return tuple(datasets)
