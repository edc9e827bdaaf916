"""Frozen visual and text encoders.

Two interchangeable backends provide features:

* seeded random-weight stubs -- a patch projection plus two frozen
  transformer layers for images, and hash-seeded token embeddings plus two
  frozen layers with mean pooling for text. Pure functions of (input,
  seed), cheap enough for full test runs, and genuinely frozen: their
  weight buffers are write-protected and never gradient-tracked.
* precomputed features loaded from a manifest of binary tensor containers,
  keyed by image id / category name (see ``load_precomputed``).

Per-category text features are the average over the fixed prompt-template
set with the category name substituted in.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import (
    CorruptTensorFile,
    DimensionMismatch,
    DuplicateCategory,
    EmptyCategory,
    IndivisibleResolution,
    ManifestMissing,
    ShapeMismatch,
    UnknownKey,
)
from .fourier import FourierConfig, PatchGrid, positional_field
from .layers import encoder_layer, init_encoder_layer, init_linear, linear
from .tensor_io import load_tensor

PROMPT_TEMPLATES = (
    "An image of a {category}.",
    "This is an image of a {category}.",
    "An image of a small {category}.",
    "An image of a medium {category}.",
    "An image of a large {category}.",
    "An image of a {category} within the context.",
    "An image of the {category} within the context.",
    "An image of the {category} within the context.",
    "A resized image of a{category} within the context.",
    "This falls under a {category} within the context.",
    "This falls under the {category} within the context.",
    "This falls under one {category} within the context.",
)


@dataclass
class VisualFeatures:
    tokens: T.Tensor  # [h*w, d], row-major over the grid
    grid: PatchGrid


@dataclass
class TextFeatures:
    embeddings: T.Tensor  # [len(categories), d]
    categories: tuple[str, ...]


def expand_templates(category: str) -> list[str]:
    """All prompt templates with the category name substituted, in order."""
    if not category or not category.strip():
        raise EmptyCategory("cannot build prompts for an empty category name")
    return [t.replace("{category}", category) for t in PROMPT_TEMPLATES]


def patchify(image: T.Tensor, p: int) -> T.Tensor:
    """Split [H,W,3] into row-major non-overlapping patches, each flattened."""
    if image.data.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatch(f"expected an [H,W,3] image, got {image.shape}")
    h_px, w_px, _ = image.shape
    if p < 1 or h_px % p != 0 or w_px % p != 0:
        raise IndivisibleResolution(f"{h_px}x{w_px} image not divisible by patch size {p}")
    h, w = h_px // p, w_px // p
    arr = image.data.reshape(h, p, w, p, 3).transpose(0, 2, 1, 3, 4).reshape(h * w, p * p * 3)
    return T.Tensor(arr, requires_grad=False)


def _token_ids(text: str) -> list[str]:
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def _stable_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")


def _freeze(params: dict[str, T.Tensor]) -> None:
    for t in params.values():
        t.data.setflags(write=False)


class FourierPositional:
    """Adds the fixed Fourier field to patch tokens; the default encoding."""

    def __init__(self, cfg: FourierConfig):
        self.cfg = cfg

    def apply(self, tokens: T.Tensor, grid: PatchGrid) -> T.Tensor:
        field = positional_field(grid, self.cfg)
        if tokens.data.ndim == 2:
            return T.add(tokens, T.Tensor(np.array(field)))
        bsz = tokens.shape[0]
        return T.add(tokens, T.Tensor(np.broadcast_to(field, (bsz,) + field.shape).copy()))

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return []


class StubVisualEncoder:
    """Frozen random-weight patch encoder: projection + transformer layers.

    The projection gain keeps patch content comparable in magnitude to the
    positional field added on top of it; the mixing gain makes the frozen
    attention blend tokens hard enough that downstream modules must learn
    real routing instead of reading tokens through the residual path.
    """

    kind = "stub"

    def __init__(
        self,
        d: int,
        patch: int,
        seed: int,
        num_layers: int = 2,
        num_heads: int = 4,
        content_gain: float = 4.0,
        mixing_gain: float = 3.0,
    ):
        self.d = d
        self.patch = patch
        self.seed = seed
        self.num_heads = num_heads
        rng = np.random.default_rng([seed, 0x715A])
        self.params: dict[str, T.Tensor] = {}
        w, b = init_linear(rng, 3 * patch * patch, d, requires_grad=False)
        w.data *= content_gain
        self.params["proj.w"] = w
        self.params["proj.b"] = b
        self.layers: list[dict[str, T.Tensor]] = []
        for i in range(num_layers):
            layer = init_encoder_layer(rng, d, num_heads, mlp_ratio=2, requires_grad=False)
            layer["attn.o.w"].data *= mixing_gain
            self.layers.append(layer)
            for name, t in layer.items():
                self.params[f"layer.{i}.{name}"] = t
        _freeze(self.params)

    def encode_batch(self, images: list[T.Tensor], positional) -> tuple[T.Tensor, PatchGrid]:
        """Encode a batch to [B, h*w, d] tokens; gradients can flow through
        the positional arguments (for a learned table) but never into the
        frozen weights."""
        grids = {(im.shape[0], im.shape[1]) for im in images}
        if len(grids) != 1:
            raise ShapeMismatch("batch mixes image resolutions")
        stacked = np.stack([patchify(im, self.patch).data for im in images])
        h = images[0].shape[0] // self.patch
        w = images[0].shape[1] // self.patch
        grid = PatchGrid(h, w, self.patch)
        x = linear(T.Tensor(stacked), self.params["proj.w"], self.params["proj.b"])
        x = positional.apply(x, grid)
        for layer in self.layers:
            x = encoder_layer(x, layer, self.num_heads)
        return x, grid

    def encode_image(self, image: T.Tensor, positional) -> VisualFeatures:
        tokens, grid = self.encode_batch([image], positional)
        return VisualFeatures(tokens=T.reshape(tokens, tokens.shape[1:]), grid=grid)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()


class StubTextEncoder:
    """Frozen text encoder over hash-seeded token embeddings."""

    kind = "stub"

    def __init__(self, d: int, seed: int, num_layers: int = 2, num_heads: int = 4):
        self.d = d
        self.seed = seed
        self.num_heads = num_heads
        rng = np.random.default_rng([seed, 0x7E47])
        self.layers: list[dict[str, T.Tensor]] = []
        self.params: dict[str, T.Tensor] = {}
        for i in range(num_layers):
            layer = init_encoder_layer(rng, d, num_heads, mlp_ratio=2, requires_grad=False)
            self.layers.append(layer)
            for name, t in layer.items():
                self.params[f"layer.{i}.{name}"] = t
        _freeze(self.params)

    def _token_embedding(self, token: str) -> np.ndarray:
        rng = np.random.default_rng([self.seed, _stable_hash(token)])
        return rng.normal(0.0, 1.0 / np.sqrt(self.d), size=self.d)

    def embed_prompt(self, text: str) -> np.ndarray:
        """Mean-pooled embedding of one prompt string."""
        tokens = _token_ids(text)
        if not tokens:
            raise EmptyCategory(f"prompt has no tokens: {text!r}")
        seq = np.stack([self._token_embedding(t) for t in tokens])
        x = T.Tensor(seq[None])
        for layer in self.layers:
            x = encoder_layer(x, layer, self.num_heads)
        return x.data[0].mean(axis=0)

    def encode(self, categories: list[str]) -> TextFeatures:
        if not categories:
            raise EmptyCategory("no categories to encode")
        if any(not c or not str(c).strip() for c in categories):
            raise EmptyCategory("blank category name")
        if len(set(categories)) != len(categories):
            raise DuplicateCategory(f"duplicate category names in {categories}")
        rows = []
        for cat in categories:
            prompts = expand_templates(cat)
            rows.append(np.mean([self.embed_prompt(p) for p in prompts], axis=0))
        return TextFeatures(
            embeddings=T.Tensor(np.stack(rows), requires_grad=False),
            categories=tuple(categories),
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()


def encode_image(image: T.Tensor, enc: StubVisualEncoder, cfg: FourierConfig) -> VisualFeatures:
    """Patchify, project, add Fourier positions, run the frozen layers."""
    return enc.encode_image(image, FourierPositional(cfg))


def encode_text(categories: list[str], enc: StubTextEncoder) -> TextFeatures:
    """One row per category: the mean over its substituted prompt embeddings."""
    return enc.encode(categories)


class PrecomputedEncoder:
    """Feature store backed by exported tensor containers."""

    kind = "precomputed"

    def __init__(self, d: int, images: dict[str, np.ndarray], texts: dict[str, np.ndarray], source: str):
        self.d = d
        self.source = source
        self._images = images
        self._texts = texts

    def image_features(self, image_id: str, patch: int) -> VisualFeatures:
        if image_id not in self._images:
            raise UnknownKey(f"image id {image_id!r} not in manifest {self.source}")
        arr = self._images[image_id]
        grid = PatchGrid(arr.shape[0], arr.shape[1], patch)
        tokens = arr.reshape(grid.tokens, self.d)
        return VisualFeatures(tokens=T.Tensor(tokens.copy()), grid=grid)

    def text_features(self, categories: list[str]) -> TextFeatures:
        if not categories:
            raise EmptyCategory("no categories requested")
        if len(set(categories)) != len(categories):
            raise DuplicateCategory(f"duplicate category names in {categories}")
        rows = []
        for cat in categories:
            if cat not in self._texts:
                raise UnknownKey(f"category {cat!r} not in manifest {self.source}")
            rows.append(self._texts[cat])
        return TextFeatures(T.Tensor(np.stack(rows)), tuple(categories))

    @property
    def image_ids(self) -> list[str]:
        return sorted(self._images)


def load_precomputed(manifest_path: str | Path) -> PrecomputedEncoder:
    """Read a ``kind<TAB>key<TAB>filename`` manifest plus its tensor files.

    Image entries must be rank-3 [h, w, d]; text entries rank-1 [d]. Every
    entry must agree on d.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestMissing(f"feature manifest not found: {manifest_path}")
    base = manifest_path.parent
    images: dict[str, np.ndarray] = {}
    texts: dict[str, np.ndarray] = {}
    d: int | None = None
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CorruptTensorFile(f"{manifest_path}:{lineno}: expected 'kind<TAB>key<TAB>filename'")
        kind, key, fname = parts
        arr = load_tensor(base / fname)
        if kind == "image":
            if arr.ndim != 3:
                raise DimensionMismatch(f"image features for {key!r} must be rank-3, got {arr.shape}")
            width = arr.shape[2]
            images[key] = arr
        elif kind == "text":
            if arr.ndim != 1:
                raise DimensionMismatch(f"text features for {key!r} must be rank-1, got {arr.shape}")
            width = arr.shape[0]
            texts[key] = arr
        else:
            raise CorruptTensorFile(f"{manifest_path}:{lineno}: unknown kind {kind!r}")
        if d is None:
            d = int(width)
        elif d != width:
            raise DimensionMismatch(f"{manifest_path}:{lineno}: width {width} != {d}")
    if d is None:
        raise CorruptTensorFile(f"{manifest_path}: manifest lists no tensors")
    return PrecomputedEncoder(d, images, texts, str(manifest_path))
