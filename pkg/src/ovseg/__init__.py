"""Open-vocabulary segmentation over frozen encoders.

Patch tokens carry Fourier positional embeddings, a transformer fusion
module mixes them with prompt-averaged text embeddings, and a hierarchical
decoder scores every pixel against every category by cosine similarity.
Training touches only the fusion/alignment/decoder parameters; evaluation
follows the four-fold zero-shot protocol over a 20-category universe.
"""

from . import tensor
from .config import ExperimentConfig, OptimizerConfig, load_config, parse_config, save_config
from .encoders import (
    PROMPT_TEMPLATES,
    PrecomputedEncoder,
    StubTextEncoder,
    StubVisualEncoder,
    TextFeatures,
    VisualFeatures,
    encode_image,
    encode_text,
    expand_templates,
    load_precomputed,
    patchify,
)
from .folds import PASCAL_CATEGORIES, FoldSpec, all_folds, make_fold
from .fourier import FourierConfig, PatchGrid, apply_positional, fourier_embed
from .fusion import ChannelAligner, FusionConfig, FusionModule, align_channels, fuse
from .metrics import FoldReport, miou
from .model import LearnedPositionTable, SegModel
from .seg_head import (
    Decoder,
    DecoderConfig,
    PredictionSet,
    decode,
    predict_masks,
    similarity_logits,
)
from .synthetic import SegmentationSample, SynthConfig, gen_synthetic, load_dataset, one_hot_mask, save_dataset
from .tensor import Tensor
from .tensor_io import load_tensor, save_tensor
from .train import Adam, TrainLog, evaluate, load_checkpoint, run_ablation, save_checkpoint, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
