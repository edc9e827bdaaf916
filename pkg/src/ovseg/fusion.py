"""Cross-modal fusion: MLP channel alignment plus transformer encoder
layers over the concatenated visual and text token sequence.

Both token sets are projected to a shared width, concatenated (visual
tokens first), run through full self-attention layers so each modality can
attend to the other, and split back apart. Output token counts and widths
match the aligned inputs. Text tokens get no positional encoding here, so
fusion is equivariant to text-token order; visual tokens already carry
their Fourier positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import TextFeatures, VisualFeatures
from .errors import ConfigMismatch, DimensionMismatch
from .layers import encoder_layer, init_encoder_layer, init_linear, linear


@dataclass(frozen=True)
class FusionConfig:
    d_fuse: int = 32
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4
    seed: int = 0
    # hidden widths of the alignment MLPs; the narrow text bottleneck keeps
    # the text-to-feature map low-complexity so it extrapolates to unseen
    # categories instead of memorizing the training ones
    theta_hidden_v: int = 32
    theta_hidden_t: int = 8

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigMismatch("fusion needs at least one layer")
        if self.d_fuse < 1 or self.d_fuse % self.num_heads != 0:
            raise ConfigMismatch(
                f"d_fuse {self.d_fuse} must be positive and divisible by {self.num_heads} heads"
            )
        if self.mlp_ratio < 1:
            raise ConfigMismatch("mlp_ratio must be >= 1")
        if self.theta_hidden_v < 1 or self.theta_hidden_t < 1:
            raise ConfigMismatch("alignment hidden widths must be positive")


class ChannelAligner:
    """Per-modality two-layer MLPs mapping d_v / d_t to the shared width."""

    def __init__(self, d_v: int, d_t: int, d_fuse: int, seed: int,
                 hidden_v: int | None = None, hidden_t: int | None = None):
        self.d_v, self.d_t, self.d_fuse = d_v, d_t, d_fuse
        rng = np.random.default_rng([seed, 0xA116])
        self.params: dict[str, T.Tensor] = {}
        for prefix, d_in, hidden in (
            ("theta_v", d_v, hidden_v or d_fuse),
            ("theta_t", d_t, hidden_t or d_fuse),
        ):
            w0, b0 = init_linear(rng, d_in, hidden, requires_grad=True)
            w1, b1 = init_linear(rng, hidden, d_fuse, requires_grad=True)
            self.params[f"{prefix}.0.w"] = w0
            self.params[f"{prefix}.0.b"] = b0
            self.params[f"{prefix}.1.w"] = w1
            self.params[f"{prefix}.1.b"] = b1

    def _mlp(self, x: T.Tensor, prefix: str) -> T.Tensor:
        p = self.params
        h = T.gelu(linear(x, p[f"{prefix}.0.w"], p[f"{prefix}.0.b"]))
        return linear(h, p[f"{prefix}.1.w"], p[f"{prefix}.1.b"])

    def align(self, vis: T.Tensor, txt: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
        if vis.shape[-1] != self.d_v:
            raise DimensionMismatch(f"visual width {vis.shape[-1]} vs theta_v input {self.d_v}")
        if txt.shape[-1] != self.d_t:
            raise DimensionMismatch(f"text width {txt.shape[-1]} vs theta_t input {self.d_t}")
        return self._mlp(vis, "theta_v"), self._mlp(txt, "theta_t")

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        return sorted(self.params.items())


class FusionModule:
    """Trainable alignment MLPs plus the stack of fusion encoder layers."""

    def __init__(self, cfg: FusionConfig, d_v: int, d_t: int):
        self.cfg = cfg
        self.aligner = ChannelAligner(
            d_v, d_t, cfg.d_fuse, cfg.seed,
            hidden_v=cfg.theta_hidden_v, hidden_t=cfg.theta_hidden_t,
        )
        rng = np.random.default_rng([cfg.seed, 0xF5E0])
        self.layers: list[dict[str, T.Tensor]] = [
            init_encoder_layer(rng, cfg.d_fuse, cfg.num_heads, cfg.mlp_ratio, requires_grad=True)
            for _ in range(cfg.num_layers)
        ]

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        out = list(self.aligner.parameters())
        for i, layer in enumerate(self.layers):
            out.extend((f"layer.{i}.{name}", t) for name, t in sorted(layer.items()))
        return out

    @property
    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())


def _tokens(x) -> T.Tensor:
    if isinstance(x, VisualFeatures):
        return x.tokens
    if isinstance(x, TextFeatures):
        return x.embeddings
    return x


def align_channels(F_i, F_w, m) -> tuple[T.Tensor, T.Tensor]:
    """Project both token sets to the shared fusion width."""
    aligner = m.aligner if isinstance(m, FusionModule) else m
    return aligner.align(_tokens(F_i), _tokens(F_w))


def fuse(F_i, F_w, m: FusionModule, attn_sink: list | None = None) -> tuple[T.Tensor, T.Tensor]:
    """Align, concatenate (visual tokens first), run the encoder layers over
    the joint sequence, and split back into per-modality token sets.

    Accepts [N, d] tokens, or a batched [B, N_v, d] visual set with either
    batched or shared [N_t, d] text tokens. Pass a list as ``attn_sink`` to
    capture each layer's attention weights.
    """
    vis, txt = align_channels(F_i, F_w, m)
    squeeze = vis.data.ndim == 2
    if squeeze:
        vis = T.reshape(vis, (1,) + vis.shape)
    if txt.data.ndim == 2:
        txt = T.tile_leading(txt, vis.shape[0]) if vis.shape[0] > 1 else T.reshape(txt, (1,) + txt.shape)
    n_v, n_t = vis.shape[1], txt.shape[1]
    x = T.concat([vis, txt], axis=1)
    for layer in m.layers:
        x = encoder_layer(x, layer, m.cfg.num_heads, attn_sink)
    vis_out, txt_out = T.split(x, [n_v, n_t], axis=1)
    if squeeze:
        vis_out = T.reshape(vis_out, vis_out.shape[1:])
        txt_out = T.reshape(txt_out, txt_out.shape[1:])
    return vis_out, txt_out
