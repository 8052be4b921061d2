"""Image datasets: directory ingest, preprocessing, splits, and a synthetic
glyph generator so the whole pipeline can be exercised without any downloads.

Disk layout for real datasets: root/group/category/*.png, 8-bit grayscale.
Pixels are normalized to [0,1] with ink ~= 1 and background ~= 0 (scanned
glyph sets ship dark-ink-on-white, so ingest inverts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError, ProtocolError


@dataclass
class Category:
    cid: str
    group: str
    samples: list  # list[np.ndarray], each [H,W] float32 in [0,1]
    sample_names: list


@dataclass
class Dataset:
    categories: list
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {c.cid: c for c in self.categories}
        if len(self._index) != len(self.categories):
            raise DataError("duplicate category ids")

    def __len__(self):
        return len(self.categories)

    def category(self, cid: str) -> Category:
        try:
            return self._index[cid]
        except KeyError:
            raise DataError(f"unknown category {cid!r}") from None

    def image(self, ref: str) -> np.ndarray:
        """Resolve a 'category_id/sample_name' reference to pixels."""
        cid, _, name = ref.rpartition("/")
        cat = self.category(cid)
        try:
            return cat.samples[cat.sample_names.index(name)]
        except ValueError:
            raise DataError(f"unknown sample {ref!r}") from None

    @property
    def min_samples_per_category(self) -> int:
        return min(len(c.samples) for c in self.categories)


def load_image_dataset(root) -> Dataset:
    """Ingest root/group/category/*.png into a Dataset, lexicographic order."""
    from PIL import Image

    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    categories = []
    for group_dir in sorted(root.iterdir()):
        if not group_dir.is_dir():
            continue
        for cat_dir in sorted(group_dir.iterdir()):
            if not cat_dir.is_dir():
                continue
            samples, names = [], []
            for img_path in sorted(cat_dir.glob("*.png")):
                try:
                    with Image.open(img_path) as im:
                        if im.mode not in ("L", "1"):
                            raise DataError(f"{img_path}: expected grayscale, got mode {im.mode}")
                        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
                except DataError:
                    raise
                except Exception as exc:
                    raise DataError(f"{img_path}: {exc}") from exc
                samples.append(np.ascontiguousarray(1.0 - arr))  # ink -> 1
                names.append(img_path.stem)
            if samples:
                categories.append(
                    Category(f"{group_dir.name}/{cat_dir.name}", group_dir.name, samples, names)
                )
    if not categories:
        raise DataError(f"no categories found under {root}")
    return Dataset(categories)


def resize(image: np.ndarray, size: int = 28) -> np.ndarray:
    """Bilinear resize to size x size (corner-aligned), clamped to [0,1]."""
    H, W = image.shape
    if (H, W) == (size, size):
        return np.clip(image, 0.0, 1.0).astype(np.float32)
    ys = np.linspace(0.0, H - 1.0, size) if size > 1 else np.array([(H - 1) / 2.0])
    xs = np.linspace(0.0, W - 1.0, size) if size > 1 else np.array([(W - 1) / 2.0])
    y0 = np.clip(np.floor(ys).astype(int), 0, H - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    img = image.astype(np.float64)
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_dataset(dataset: Dataset, size: int) -> Dataset:
    cats = [
        Category(c.cid, c.group, [resize(s, size) for s in c.samples], list(c.sample_names))
        for c in dataset.categories
    ]
    return Dataset(cats)


def augment_rotations(dataset: Dataset) -> Dataset:
    """Add 90/180/270-degree grid rotations, each as a NEW category.

    Rotations of distinct glyphs are distinct glyphs; making them new
    categories preserves the one-sample-per-category episode invariant.
    """
    categories = []
    for cat in dataset.categories:
        for s in cat.samples:
            if s.shape[0] != s.shape[1]:
                raise ContractError(f"rotation augmentation needs square images, got {s.shape}")
        for kturn, deg in enumerate((0, 90, 180, 270)):
            samples = [np.ascontiguousarray(np.rot90(s, kturn)) for s in cat.samples]
            categories.append(
                Category(f"{cat.cid}@rot{deg:03d}", cat.group, samples, list(cat.sample_names))
            )
    return Dataset(categories)


@dataclass(frozen=True)
class SplitSpec:
    """Category subset selector.

    kinds: full | tiny1 (first category per group) | tiny2 (first two per
    group) | first-n | explicit (category id list) | groups (group id list).
    """

    kind: str = "full"
    n: int | None = None
    categories: tuple = ()
    groups: tuple = ()


def split_background(dataset: Dataset, spec: SplitSpec) -> Dataset:
    if spec.kind == "full":
        selected = list(dataset.categories)
    elif spec.kind in ("tiny1", "tiny2"):
        take = 1 if spec.kind == "tiny1" else 2
        seen: dict = {}
        for cat in dataset.categories:
            seen.setdefault(cat.group, [])
            if len(seen[cat.group]) < take:
                seen[cat.group].append(cat)
        selected = [c for cats in seen.values() for c in cats]
    elif spec.kind == "first-n":
        if not spec.n or spec.n < 1:
            raise ConfigError("first-n split needs n >= 1")
        selected = dataset.categories[: spec.n]
    elif spec.kind == "explicit":
        selected = [dataset.category(cid) for cid in spec.categories]
    elif spec.kind == "groups":
        wanted = set(spec.groups)
        if not wanted:
            raise ConfigError("groups split needs a nonempty group list")
        selected = [c for c in dataset.categories if c.group in wanted]
    else:
        raise ConfigError(f"unknown split kind {spec.kind!r}")
    if not selected:
        raise ConfigError(f"split {spec.kind!r} selected no categories")
    return Dataset(selected)


# -- synthetic glyphs -----------------------------------------------------------


def _segment_distance(py, px, seg):
    """Distance of each grid point to a segment ((y0,x0),(y1,x1))."""
    (y0, x0), (y1, x1) = seg
    dy, dx = y1 - y0, x1 - x0
    den = dy * dy + dx * dx
    if den < 1e-12:
        return np.hypot(py - y0, px - x0)
    t = np.clip(((py - y0) * dy + (px - x0) * dx) / den, 0.0, 1.0)
    return np.hypot(py - (y0 + t * dy), px - (x0 + t * dx))


def _render_strokes(strokes, size: int, width: float) -> np.ndarray:
    res = size * 4
    ys, xs = np.mgrid[0:res, 0:res]
    py = (ys + 0.5) / res
    px = (xs + 0.5) / res
    ink = np.zeros((res, res))
    for seg in strokes:
        d = _segment_distance(py, px, seg)
        ink = np.maximum(ink, np.clip(1.5 - d / width, 0.0, 1.0))
    # 4x4 box filter down to the target size
    small = ink.reshape(size, 4, size, 4).mean(axis=(1, 3))
    return np.clip(small, 0.0, 1.0).astype(np.float32)


def _jitter_strokes(strokes, rng):
    theta = rng.uniform(-0.15, 0.15)
    scale = rng.uniform(0.9, 1.1)
    ty, tx = rng.uniform(-0.05, 0.05, size=2)
    c, s = math.cos(theta), math.sin(theta)
    out = []
    for (y0, x0), (y1, x1) in strokes:
        pts = []
        for y, x in ((y0, x0), (y1, x1)):
            yy, xx = y - 0.5, x - 0.5
            pts.append((scale * (c * yy - s * xx) + 0.5 + ty, scale * (s * yy + c * xx) + 0.5 + tx))
        out.append((pts[0], pts[1]))
    return out


def synth_glyphs(num_classes: int, k: int = 20, size: int = 28, seed: int = 0) -> Dataset:
    """Random stroke-glyph dataset: one fixed stroke layout per class, k
    affine-jittered renderings per class. Deterministic per (seed, class)."""
    categories = []
    for c in range(num_classes):
        crng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(c,)))
        n_strokes = int(crng.integers(3, 6))
        strokes = [
            (tuple(crng.uniform(0.15, 0.85, size=2)), tuple(crng.uniform(0.15, 0.85, size=2)))
            for _ in range(n_strokes)
        ]
        width = float(crng.uniform(0.035, 0.055))
        samples, names = [], []
        for i in range(k):
            srng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(c, i)))
            samples.append(_render_strokes(_jitter_strokes(strokes, srng), size, width))
            names.append(f"s{i:03d}")
        categories.append(Category(f"class{c:04d}", f"g{c // 10:02d}", samples, names))
    return Dataset(categories)


def load_bpl_trials(path, expected_trials: int = 400, expected_way: int = 20):
    """Load a fixed one-shot trial manifest and enforce the 400 x 20-way protocol."""
    from .sampler import load_manifest

    trials = load_manifest(path)
    if len(trials) != expected_trials:
        raise ProtocolError(f"{path}: expected {expected_trials} trials, found {len(trials)}")
    for t in trials:
        if len(t.candidates) != expected_way:
            raise ProtocolError(
                f"{path}: expected {expected_way}-way trials, found {len(t.candidates)}"
            )
        if len(t.recognizing) != 1:
            raise ProtocolError(f"{path}: fixed protocol trials must be one-shot")
    return trials


