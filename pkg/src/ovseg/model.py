"""End-to-end segmentation model: frozen encoders feeding the trainable
alignment, fusion, and decoder stack.

Three ablation variants share this assembly:

* ``B_L_0`` -- a trainable position table replaces the Fourier field, and
  fusion is an identity after channel alignment.
* ``B_L_1`` -- Fourier positions, identity fusion after alignment.
* ``B_L_2`` -- Fourier positions plus the full fusion module.

The decoder is present in every variant. Only alignment MLPs, fusion
layers, decoder convolutions, and (for B_L_0) the position table are ever
trainable; encoder weights are write-protected constants.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ExperimentConfig
from .encoders import (
    FourierPositional,
    PrecomputedEncoder,
    StubTextEncoder,
    StubVisualEncoder,
    TextFeatures,
    patchify,
)
from .errors import ConfigMismatch, ShapeMismatch
from .fourier import PatchGrid
from .fusion import ChannelAligner, FusionModule, fuse
from .layers import encoder_layer, linear
from .seg_head import Decoder, decode, similarity_logits
from .synthetic import SegmentationSample


class LearnedPositionTable:
    """Trainable additive position embeddings, sized to one fixed grid.

    The usual learned-position baseline: it cannot evaluate on a grid of
    any other size, unlike the Fourier field.
    """

    def __init__(self, grid: PatchGrid, d: int, seed: int):
        self.grid = grid
        rng = np.random.default_rng([seed, 0x9051])
        self.table = T.Tensor(rng.normal(0.0, 0.02, size=(grid.tokens, d)), requires_grad=True)

    def apply(self, tokens: T.Tensor, grid: PatchGrid) -> T.Tensor:
        if (grid.h, grid.w) != (self.grid.h, self.grid.w):
            raise ShapeMismatch(
                f"learned position table is fixed to {self.grid.h}x{self.grid.w}, "
                f"cannot encode a {grid.h}x{grid.w} grid"
            )
        if tokens.data.ndim == 2:
            return T.add(tokens, self.table)
        return T.add(tokens, T.tile_leading(self.table, tokens.shape[0]))

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return [("pos_table", self.table)]


class SegModel:
    def __init__(self, cfg: ExperimentConfig, precomputed: PrecomputedEncoder | None = None):
        self.cfg = cfg
        variant = cfg.ablation_variant
        self.use_fourier = variant != "B_L_0"
        self.use_fusion = variant == "B_L_2"
        self.grid = PatchGrid(cfg.height // cfg.patch, cfg.width // cfg.patch, cfg.patch)
        self.precomputed = precomputed
        if precomputed is not None:
            d_v = precomputed.d
            self.vis_enc = None
        else:
            d_v = cfg.d_v
            self.vis_enc = StubVisualEncoder(d=d_v, patch=cfg.patch, seed=cfg.encoder_seed)
        self.d_v = d_v
        self.txt_enc = StubTextEncoder(d=cfg.d_t, seed=cfg.encoder_seed)
        if d_v != cfg.fourier.d and self.use_fourier:
            raise ConfigMismatch(f"fourier width {cfg.fourier.d} vs visual width {d_v}")
        if self.use_fourier:
            self.positional = FourierPositional(cfg.fourier)
        else:
            self.positional = LearnedPositionTable(self.grid, d_v, cfg.seed)
        if self.use_fusion:
            self.fusion: FusionModule | None = FusionModule(cfg.fusion, d_v=d_v, d_t=cfg.d_t)
            self.aligner = self.fusion.aligner
        else:
            self.fusion = None
            self.aligner = ChannelAligner(
                d_v, cfg.d_t, cfg.fusion.d_fuse, cfg.fusion.seed,
                hidden_v=cfg.fusion.theta_hidden_v, hidden_t=cfg.fusion.theta_hidden_t,
            )
        self.decoder = Decoder(cfg.decoder, d_in=cfg.fusion.d_fuse, seed=cfg.seed)

    # -- parameters ---------------------------------------------------------

    def trainable_parameters(self) -> list[tuple[str, T.Tensor]]:
        out: list[tuple[str, T.Tensor]] = []
        if self.fusion is not None:
            out.extend(self.fusion.parameters())
        else:
            out.extend(self.aligner.parameters())
        out.extend((f"decoder.{n}", t) for n, t in self.decoder.parameters())
        out.extend(self.positional.parameters())
        return out

    @property
    def param_count(self) -> int:
        return sum(t.size for _, t in self.trainable_parameters())

    def encoder_checksums(self) -> dict[str, str]:
        out = {"text": self.txt_enc.checksum()}
        if self.vis_enc is not None:
            out["visual"] = self.vis_enc.checksum()
        return out

    # -- feature plumbing ---------------------------------------------------

    def encode_categories(self, categories) -> TextFeatures:
        if self.precomputed is not None:
            return self.precomputed.text_features(list(categories))
        return self.txt_enc.encode(list(categories))

    def precompute_visual(self, samples: list[SegmentationSample]) -> np.ndarray:
        """Per-sample constant visual stage, computed once per run.

        With Fourier positions the whole frozen encoder output is constant;
        with the learned table only the projected patches are (positions are
        added inside ``visual_tokens`` so their gradient can flow).
        """
        if self.precomputed is not None:
            feats = [
                self.precomputed.image_features(s.sample_id, self.cfg.patch) for s in samples
            ]
            return np.stack([f.tokens.data for f in feats])
        patches = np.stack([patchify(s.image, self.cfg.patch).data for s in samples])
        proj = linear(
            T.Tensor(patches), self.vis_enc.params["proj.w"], self.vis_enc.params["proj.b"]
        ).data
        if not self.use_fourier:
            return proj  # positions enter later, in-graph
        x = self.positional.apply(T.Tensor(proj), self.grid)
        for layer in self.vis_enc.layers:
            x = encoder_layer(x, layer, self.vis_enc.num_heads)
        return x.data

    def visual_tokens(self, cached: np.ndarray) -> T.Tensor:
        """[B, N, d_v] visual tokens from the cached constant stage."""
        x = T.Tensor(cached)
        if self.precomputed is not None:
            # stored features are pre-positional patch tokens
            return self.positional.apply(x, self.grid)
        if self.use_fourier:
            return x  # cache already holds the final encoder output
        x = self.positional.apply(x, self.grid)
        for layer in self.vis_enc.layers:
            x = encoder_layer(x, layer, self.vis_enc.num_heads)
        return x

    # -- forward ------------------------------------------------------------

    def logits_for_batch(self, cached_visual: np.ndarray, text: TextFeatures) -> T.Tensor:
        """[B, K, H, W] cosine logits for a batch of cached visual stages."""
        vis = self.visual_tokens(cached_visual)
        txt = text.embeddings
        bsz = vis.shape[0]
        if self.fusion is not None:
            vis_f, txt_f = fuse(vis, txt, self.fusion)
            if self.cfg.cosine_source == "aligned":
                _, txt_f = self.aligner.align(vis, txt)
                txt_f = T.tile_leading(txt_f, bsz)
        else:
            vis_f, txt_f = self.aligner.align(vis, txt)
            txt_f = T.tile_leading(txt_f, bsz)
        feat = decode(vis_f, self.grid, self.decoder)
        return similarity_logits(feat, txt_f)


def batch_targets(
    samples: list[SegmentationSample], categories: tuple[str, ...]
) -> np.ndarray:
    """[B, K, H, W] binary masks against a fixed category list.

    Categories absent from a sample get all-background targets, which is
    what teaches the head to stay silent for text that does not match the
    image.
    """
    k = len(categories)
    index = {name: i for i, name in enumerate(categories)}
    h, w = samples[0].label_map.shape
    out = np.zeros((len(samples), k, h, w))
    for b, s in enumerate(samples):
        for local, name in enumerate(s.categories, start=1):
            if name not in index:
                continue
            out[b, index[name]] = s.label_map == local
    return out


def gt_label_map(sample: SegmentationSample, categories: tuple[str, ...]) -> np.ndarray:
    """Sample labels re-indexed against a fold category list (0 background)."""
    index = {name: i + 1 for i, name in enumerate(categories)}
    out = np.zeros_like(sample.label_map)
    for local, name in enumerate(sample.categories, start=1):
        if name in index:
            out[sample.label_map == local] = index[name]
    return out
