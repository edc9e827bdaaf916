"""Procedural segmentation datasets for desk-scale experiments.

Each category is a shape family (rectangles, ellipses, or stripe blocks)
painted in a category-specific color onto a noisy gray background, so
masks are exact by construction and per-category pixel statistics are
separated by several background-noise standard deviations.

Category colors are derived from the frozen text encoder's embedding of
the category name (centered, then linearly projected to color space, with
a repulsion pass enforcing pairwise separation). That gives text features
genuine predictive power over appearance: a model can learn the
text-to-color relation on training categories and apply it to categories
it has never seen, which is what makes a zero-shot evaluation on this
data meaningful rather than pure noise. Use the same encoder seed and
text width for the dataset and the experiment.

Samples cycle through the four fold blocks (categories 0-4, 5-9, ...):
each image draws its categories from a single block, so every image
belongs cleanly to one fold's test stream and the other folds' training
streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoders import StubTextEncoder, _stable_hash
from .errors import BadConfig, ManifestMissing, UnknownLabel
from .folds import FOLD_SIZE, FoldSpec
from .pgm import read_pgm, write_pgm
from .tensor_io import load_tensor, save_tensor

COLOR_LO, COLOR_HI = 0.1, 0.88
FOREGROUND_NOISE = 0.02
# well beyond the 3-sigma statistical floor: wide spacing keeps unseen-category
# colors distinguishable after the learned feature maps
COLOR_MARGIN = 0.24


@dataclass(frozen=True)
class SynthConfig:
    num_images: int = 280
    height: int = 32
    width: int = 32
    universe_size: int = 20
    shapes_per_image: int = 3
    encoder_seed: int = 0
    text_dim: int = 32
    noise_sigma: float = 0.04
    # every image carries a random brightness plane a*x+b*y with |a|,|b| up
    # to this amplitude; matching colors despite it takes spatial awareness
    illumination: float = 0.08
    # uniform random per-image color cast, +-amplitude per channel; undoing
    # it needs pooled global context, which only attention provides
    tint: float = 0.1

    def __post_init__(self):
        if min(self.num_images, self.height, self.width, self.universe_size,
               self.shapes_per_image, self.text_dim) < 1:
            raise BadConfig("all synthetic dataset sizes must be positive")
        if not 0 < self.noise_sigma < 0.2:
            raise BadConfig("noise_sigma must lie in (0, 0.2)")
        if not 0 <= self.illumination < 0.3:
            raise BadConfig("illumination must lie in [0, 0.3)")
        if not 0 <= self.tint < 0.3:
            raise BadConfig("tint must lie in [0, 0.3)")


@dataclass
class SegmentationSample:
    image: T.Tensor  # [H, W, 3] in [0,1]
    mask: T.Tensor  # [H, W, |U|] one-hot
    categories: tuple[str, ...]  # U, the categories observed in this image
    label_map: np.ndarray  # [H, W]; 0 background, k = categories[k-1]
    sample_id: str


@dataclass
class SyntheticDataset:
    samples: list[SegmentationSample]
    universe: tuple[str, ...]
    cfg: SynthConfig
    seed: int
    colors: np.ndarray = field(repr=False, default=None)

    def split_for_fold(self, fold: FoldSpec) -> tuple[list[SegmentationSample], list[SegmentationSample]]:
        """(train stream, test stream): samples whose categories sit fully
        inside the fold's train / test sets. Mixed samples are dropped."""
        train = [s for s in self.samples if set(s.categories) <= set(fold.train_categories)]
        test = [s for s in self.samples if set(s.categories) <= set(fold.test_categories)]
        return train, test


def synthetic_universe(size: int) -> tuple[str, ...]:
    return tuple(f"synth{i:02d}" for i in range(size))


def one_hot_mask(label_map: np.ndarray, categories) -> T.Tensor:
    """Indicator stack [H, W, |U|]; background (0) contributes to no channel."""
    label_map = np.asarray(label_map)
    k = len(tuple(categories))
    if label_map.min() < 0 or label_map.max() > k:
        raise UnknownLabel(
            f"label {int(label_map.max())} outside 0..{k} for {k} categories"
        )
    out = np.zeros(label_map.shape + (k,))
    for c in range(1, k + 1):
        out[:, :, c - 1] = label_map == c
    return T.Tensor(out)


def category_colors(universe, cfg: SynthConfig) -> np.ndarray:
    """One RGB color per category, predictable from its text embedding.

    Embeddings are centered across the universe, projected to 3 channels,
    rescaled into the color box, then pushed apart until every pair is at
    least 3.5 background sigmas apart.
    """
    universe = list(universe)
    enc = StubTextEncoder(d=cfg.text_dim, seed=cfg.encoder_seed)
    z = enc.encode(universe).embeddings.data
    z = z - z.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    z = z / np.where(norms > 0, norms, 1.0)
    proj_rng = np.random.default_rng([cfg.encoder_seed, 0xC0102])
    raw = z @ proj_rng.normal(size=(cfg.text_dim, 3))
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    colors = COLOR_LO + (raw - lo) / span * (COLOR_HI - COLOR_LO)

    margin = max(3.5 * cfg.noise_sigma, COLOR_MARGIN)
    for _ in range(500):
        moved = False
        for a in range(len(colors)):
            for b in range(a + 1, len(colors)):
                diff = colors[a] - colors[b]
                dist = np.linalg.norm(diff)
                if dist >= margin:
                    continue
                moved = True
                direction = diff / dist if dist > 1e-12 else proj_rng.normal(size=3)
                push = (margin - dist) / 2 + 1e-3
                colors[a] = np.clip(colors[a] + direction * push, COLOR_LO, COLOR_HI)
                colors[b] = np.clip(colors[b] - direction * push, COLOR_LO, COLOR_HI)
        if not moved:
            break
    dists = np.linalg.norm(colors[:, None] - colors[None, :], axis=2)
    np.fill_diagonal(dists, np.inf)
    if dists.min() < 3.0 * cfg.noise_sigma:
        raise BadConfig(
            f"could not separate {len(colors)} category colors by 3 sigma; "
            "reduce universe_size or noise_sigma"
        )
    return colors


def _paint_shape(rng, label_map, image, color, family, cat_index, h, w):
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    ry = int(rng.integers(max(2, h // 8), max(3, h // 3) + 1))
    rx = int(rng.integers(max(2, w // 8), max(3, w // 3) + 1))
    ys, xs = np.mgrid[0:h, 0:w]
    if family == 0:  # rectangle
        inside = (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)
    elif family == 1:  # ellipse
        inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    else:  # stripe block: rectangle with every other row pair painted
        inside = (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx) & ((ys // 2) % 2 == 0)
    if not inside.any():
        inside[cy % h, cx % w] = True
    noise = rng.normal(0.0, FOREGROUND_NOISE, size=(int(inside.sum()), 3))
    image[inside] = np.clip(color + noise, 0.0, 1.0)
    label_map[inside] = cat_index


def gen_synthetic(seed: int, cfg: SynthConfig) -> SyntheticDataset:
    """Deterministic dataset of shape/texture compositions on noise."""
    universe = synthetic_universe(cfg.universe_size)
    colors = category_colors(universe, cfg)
    families = np.array([_stable_hash(name) % 3 for name in universe])
    n_blocks = max(1, cfg.universe_size // FOLD_SIZE)
    rng = np.random.default_rng([seed, 0xDA7A])
    samples: list[SegmentationSample] = []
    for i in range(cfg.num_images):
        block = i % n_blocks
        block_cats = list(range(block * FOLD_SIZE, min((block + 1) * FOLD_SIZE, cfg.universe_size)))
        n_cats = int(rng.integers(1, min(2, len(block_cats)) + 1))
        chosen = sorted(rng.choice(block_cats, size=n_cats, replace=False).tolist())
        image = rng.normal(0.5, cfg.noise_sigma, size=(cfg.height, cfg.width, 3))
        label_map = np.zeros((cfg.height, cfg.width), dtype=np.int64)
        for s in range(cfg.shapes_per_image):
            local = int(rng.integers(0, n_cats))
            cat = chosen[local]
            _paint_shape(
                rng, label_map, image, colors[cat], families[cat], local + 1,
                cfg.height, cfg.width,
            )
        gx, gy = rng.uniform(-cfg.illumination, cfg.illumination, size=2)
        cast = rng.uniform(-cfg.tint, cfg.tint, size=3)
        ys = np.linspace(-1.0, 1.0, cfg.height)[:, None]
        xs = np.linspace(-1.0, 1.0, cfg.width)[None, :]
        image = np.clip(image + (gx * xs + gy * ys)[:, :, None] + cast, 0.0, 1.0)
        cats = tuple(universe[c] for c in chosen)
        samples.append(
            SegmentationSample(
                image=T.Tensor(image),
                mask=one_hot_mask(label_map, cats),
                categories=cats,
                label_map=label_map,
                sample_id=f"sample_{i:05d}",
            )
        )
    return SyntheticDataset(samples=samples, universe=universe, cfg=cfg, seed=seed, colors=colors)


# -- on-disk layout ----------------------------------------------------------


def save_dataset(ds: SyntheticDataset, directory: str | Path) -> None:
    """meta.txt at the top, one directory per sample with image/labels/categories."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": ds.seed,
        "num_images": ds.cfg.num_images,
        "height": ds.cfg.height,
        "width": ds.cfg.width,
        "universe_size": ds.cfg.universe_size,
        "shapes_per_image": ds.cfg.shapes_per_image,
        "encoder_seed": ds.cfg.encoder_seed,
        "text_dim": ds.cfg.text_dim,
        "noise_sigma": ds.cfg.noise_sigma,
        "illumination": ds.cfg.illumination,
        "tint": ds.cfg.tint,
        "universe": ",".join(ds.universe),
    }
    (directory / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    for s in ds.samples:
        sdir = directory / s.sample_id
        sdir.mkdir(exist_ok=True)
        save_tensor(sdir / "image.blt0", s.image.data)
        write_pgm(sdir / "labels.pgm", s.label_map)
        (sdir / "categories.txt").write_text("".join(f"{c}\n" for c in s.categories))


def load_dataset(directory: str | Path) -> SyntheticDataset:
    directory = Path(directory)
    meta_path = directory / "meta.txt"
    if not meta_path.is_file():
        raise ManifestMissing(f"not a dataset directory (no meta.txt): {directory}")
    meta: dict[str, str] = {}
    for line in meta_path.read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            meta[k] = v
    cfg = SynthConfig(
        num_images=int(meta["num_images"]),
        height=int(meta["height"]),
        width=int(meta["width"]),
        universe_size=int(meta["universe_size"]),
        shapes_per_image=int(meta["shapes_per_image"]),
        encoder_seed=int(meta["encoder_seed"]),
        text_dim=int(meta["text_dim"]),
        noise_sigma=float(meta["noise_sigma"]),
        illumination=float(meta.get("illumination", "0.0")),
        tint=float(meta.get("tint", "0.0")),
    )
    universe = tuple(meta["universe"].split(","))
    samples = []
    for sdir in sorted(d for d in directory.iterdir() if d.is_dir()):
        label_map = read_pgm(sdir / "labels.pgm").astype(np.int64)
        cats = tuple(c for c in (sdir / "categories.txt").read_text().splitlines() if c)
        samples.append(
            SegmentationSample(
                image=T.Tensor(load_tensor(sdir / "image.blt0")),
                mask=one_hot_mask(label_map, cats),
                categories=cats,
                label_map=label_map,
                sample_id=sdir.name,
            )
        )
    return SyntheticDataset(samples=samples, universe=universe, cfg=cfg, seed=int(meta["seed"]))
