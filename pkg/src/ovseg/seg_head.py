"""Hierarchical decoder and the cosine-similarity mask head.

The decoder reshapes fused visual tokens back onto their patch grid and
runs ``stages`` rounds of 2x nearest-neighbor upsampling followed by a
trainable 3x3 convolution and nonlinearity, ending at input resolution.
Each pixel's feature vector is then scored against every category
embedding by cosine similarity, and a temperature-scaled sigmoid plus
class-wise thresholds turn the scores into per-category binary masks.

Probabilities come first and thresholds second: cutoffs in (0,1) are only
meaningful on the sigmoid side of the scores. A single-label map is also
derived for mIoU evaluation: each pixel takes the highest-probability
category among those passing their threshold (ties to the lowest category
index) and background when none pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigMismatch, DimensionMismatch, NonPositiveTau, ShapeMismatch, StageMismatch
from .fourier import PatchGrid
from .pgm import write_pgm


@dataclass(frozen=True)
class DecoderConfig:
    """Upsampling schedule, temperature, and mask cutoffs.

    ``channels`` lists the conv output width per stage; the final width is
    the cosine-head feature width and must match the text embedding width
    at scoring time. ``thresholds`` maps category name to cutoff; missing
    categories fall back to ``threshold_default``.
    """

    stages: int = 3
    channels: tuple[int, ...] = (32, 32, 32)
    tau: float = 0.07
    threshold_default: float = 0.5
    thresholds: tuple[tuple[str, float], ...] = field(default=())

    def __post_init__(self):
        if self.stages < 0:
            raise ConfigMismatch("stages must be non-negative")
        if len(self.channels) != self.stages:
            raise ConfigMismatch(f"{len(self.channels)} channel widths for {self.stages} stages")
        if any(c < 1 for c in self.channels):
            raise ConfigMismatch("channel widths must be positive")
        if self.tau <= 0:
            raise NonPositiveTau(f"temperature must be positive, got {self.tau}")
        for name, th in self.thresholds:
            if not 0.0 < th < 1.0:
                raise ConfigMismatch(f"threshold for {name!r} must lie in (0,1), got {th}")
        if not 0.0 < self.threshold_default < 1.0:
            raise ConfigMismatch("threshold_default must lie in (0,1)")

    def threshold_for(self, category: str) -> float:
        for name, th in self.thresholds:
            if name == category:
                return th
        return self.threshold_default


class Decoder:
    """Trainable per-stage 3x3 convolutions."""

    def __init__(self, cfg: DecoderConfig, d_in: int, seed: int = 0):
        self.cfg = cfg
        self.d_in = d_in
        rng = np.random.default_rng([seed, 0xDEC0])
        self.params: dict[str, T.Tensor] = {}
        cin = d_in
        for i, cout in enumerate(cfg.channels):
            std = np.sqrt(2.0 / (9 * cin))
            self.params[f"conv.{i}.w"] = T.Tensor(
                rng.normal(0.0, std, size=(3, 3, cin, cout)), requires_grad=True
            )
            self.params[f"conv.{i}.b"] = T.Tensor(np.zeros(cout), requires_grad=True)
            cin = cout
        self.d_out = cin

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return sorted(self.params.items())


def decode(tokens: T.Tensor, grid: PatchGrid, decoder: Decoder) -> T.Tensor:
    """Upsample fused tokens to pixel resolution: [h*w, d] -> [H, W, C]."""
    cfg = decoder.cfg
    if 2**cfg.stages != grid.p:
        raise StageMismatch(
            f"{cfg.stages} doubling stages reach {grid.h * 2**cfg.stages} px "
            f"but patch size {grid.p} needs x{grid.p}"
        )
    batched = tokens.data.ndim == 3
    n_tokens = tokens.shape[1] if batched else tokens.shape[0]
    if n_tokens != grid.tokens:
        raise ShapeMismatch(f"{n_tokens} tokens for a {grid.h}x{grid.w} grid")
    width = tokens.shape[-1]
    if width != decoder.d_in:
        raise ShapeMismatch(f"token width {width} vs decoder input width {decoder.d_in}")
    if batched:
        x = T.reshape(tokens, (tokens.shape[0], grid.h, grid.w, width))
    else:
        x = T.reshape(tokens, (grid.h, grid.w, width))
    for i in range(cfg.stages):
        x = T.upsample2x(x)
        x = T.conv3x3(x, decoder.params[f"conv.{i}.w"], decoder.params[f"conv.{i}.b"])
        if i + 1 < cfg.stages:
            # the last stage stays linear: cosine scoring needs full-orthant
            # pixel features, and a final GELU would fold them into x>0
            x = T.gelu(x)
    return x


def similarity_logits(feat_map: T.Tensor, text_tokens: T.Tensor) -> T.Tensor:
    """Cosine similarity of every pixel feature against every category row.

    [H,W,C] x [K,C] -> [K,H,W], or batched [B,H,W,C] x [B,K,C] -> [B,K,H,W].
    Both operands are L2-normalized along channels, so logits lie in [-1,1].
    """
    if feat_map.shape[-1] != text_tokens.shape[-1]:
        raise DimensionMismatch(
            f"pixel width {feat_map.shape[-1]} vs text width {text_tokens.shape[-1]}"
        )
    c = feat_map.shape[-1]
    if feat_map.data.ndim == 3:
        h, w, _ = feat_map.shape
        if text_tokens.data.ndim != 2:
            raise ShapeMismatch("per-image features need [K,C] text tokens")
        k = text_tokens.shape[0]
        pix = T.l2_normalize(T.reshape(feat_map, (h * w, c)), axis=1)
        txt = T.l2_normalize(text_tokens, axis=1)
        sims = T.matmul(pix, T.transpose(txt))  # [h*w, K]
        return T.reshape(T.transpose(sims), (k, h, w))
    if feat_map.data.ndim == 4:
        b, h, w, _ = feat_map.shape
        if text_tokens.data.ndim != 3 or text_tokens.shape[0] != b:
            raise ShapeMismatch("batched features need [B,K,C] text tokens")
        k = text_tokens.shape[1]
        pix = T.l2_normalize(T.reshape(feat_map, (b, h * w, c)), axis=2)
        txt = T.l2_normalize(text_tokens, axis=2)
        sims = T.bmm(pix, T.transpose(txt, (0, 2, 1)))  # [B, h*w, K]
        return T.reshape(T.transpose(sims, (0, 2, 1)), (b, k, h, w))
    raise ShapeMismatch(f"similarity_logits wants rank 3 or 4 features, got {feat_map.shape}")


@dataclass
class PredictionSet:
    """Per-category probabilities and binary masks plus the derived label map."""

    probs: np.ndarray  # [K, H, W] in [0,1]
    masks: np.ndarray  # [K, H, W] bool
    label_map: np.ndarray  # [H, W] int, 0 = background, k = categories[k-1]
    categories: tuple[str, ...]
    thresholds: np.ndarray  # [K]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def predict_masks(logits, cfg: DecoderConfig, categories) -> PredictionSet:
    """Temperature sigmoid, class-wise thresholding, and the label map."""
    if cfg.tau <= 0:
        raise NonPositiveTau(f"temperature must be positive, got {cfg.tau}")
    arr = logits.data if isinstance(logits, T.Tensor) else np.asarray(logits, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != len(categories):
        raise ShapeMismatch(f"logits {arr.shape} vs {len(categories)} categories")
    probs = _sigmoid(arr / cfg.tau)
    thresholds = np.array([cfg.threshold_for(c) for c in categories])
    masks = probs >= thresholds[:, None, None]
    eligible = masks.any(axis=0)
    gated = np.where(masks, probs, -np.inf)
    label_map = np.where(eligible, gated.argmax(axis=0) + 1, 0).astype(np.int64)
    return PredictionSet(
        probs=probs,
        masks=masks,
        label_map=label_map,
        categories=tuple(categories),
        thresholds=thresholds,
    )


def calibrate_thresholds(
    probs_per_image: list[np.ndarray],
    gt_masks_per_image: list[np.ndarray],
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """Grid-search one cutoff per category maximizing its binary IoU."""
    if candidates is None:
        candidates = np.arange(0.05, 0.96, 0.05)
    probs = np.concatenate([p.reshape(p.shape[0], -1) for p in probs_per_image], axis=1)
    gts = np.concatenate([g.reshape(g.shape[0], -1) for g in gt_masks_per_image], axis=1)
    k = probs.shape[0]
    best = np.full(k, 0.5)
    for c in range(k):
        gt = gts[c].astype(bool)
        best_iou = -1.0
        for th in candidates:
            pred = probs[c] >= th
            union = (pred | gt).sum()
            iou = (pred & gt).sum() / union if union else 1.0
            if iou > best_iou:
                best_iou = iou
                best[c] = th
    return best


def write_prediction_pgms(pred: PredictionSet, directory: str | Path) -> None:
    """One binary PGM per category plus the label-map PGM (index+1, 0=background)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(pred.categories):
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
        write_pgm(directory / f"mask_{i:02d}_{safe}.pgm", pred.masks[i].astype(np.uint8) * 255)
    write_pgm(directory / "labelmap.pgm", pred.label_map.astype(np.uint8))
