"""Training over frozen features, fold-wise zero-shot evaluation, the
three-variant ablation harness, and checkpointing.

Only alignment MLPs, fusion layers, decoder convolutions, and (for the
learned-position baseline) the position table receive optimizer updates;
that set is asserted explicitly every run, and the frozen encoders are
checksummed before and after training. The training stream is audited
against the fold's held-out categories: any test-fold category in it
aborts with LeakedTestCategory, so zero-shot evaluation stays honest.

With fixed (seed, config, dataset) the whole loss sequence and the saved
checkpoint are bit-for-bit reproducible.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, dump_config, load_config
from .encoders import PrecomputedEncoder, TextFeatures
from .errors import (
    CategoryMismatch,
    ConfigMismatch,
    DivergedLoss,
    EmptyDataset,
    LeakedTestCategory,
    NonFinite,
)
from .folds import FoldSpec, make_fold
from .metrics import FoldReport, confusion_counts, miou
from .model import SegModel, batch_targets, gt_label_map
from .seg_head import predict_masks, write_prediction_pgms
from .synthetic import SegmentationSample, SyntheticDataset
from .tensor_io import load_archive, save_archive


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_train_miou: list[float] = field(default_factory=list)
    wall_seconds: float = 0.0
    checkpoint_path: str = ""
    param_count: int = 0
    step_losses: list[float] = field(default_factory=list)

    def loss_log_text(self) -> str:
        """Deterministic per-step loss log (no wall-clock inside)."""
        return "".join(f"{v!r}\n" for v in self.step_losses)


class Adam:
    """Adam with decoupled weight decay over an ordered parameter list."""

    def __init__(self, params: list[tuple[str, T.Tensor]], cfg):
        self.params = list(params)
        self.lr = cfg.learning_rate
        self.b1, self.b2, self.eps = cfg.beta1, cfg.beta2, cfg.eps
        self.weight_decay = cfg.weight_decay
        self.t = 0
        self._m = [np.zeros_like(t.data) for _, t in self.params]
        self._v = [np.zeros_like(t.data) for _, t in self.params]

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.b1**self.t
        bias2 = 1.0 - self.b2**self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self._m[i] = self.b1 * self._m[i] + (1 - self.b1) * g
            self._v[i] = self.b2 * self._v[i] + (1 - self.b2) * (g * g)
            mhat = self._m[i] / bias1
            vhat = self._v[i] / bias2
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def expected_parameter_names(model: SegModel) -> set[str]:
    names = {
        f"{prefix}.{i}.{leaf}"
        for prefix in ("theta_v", "theta_t")
        for i in (0, 1)
        for leaf in ("w", "b")
    }
    for i in range(len(model.decoder.cfg.channels)):
        names.add(f"decoder.conv.{i}.w")
        names.add(f"decoder.conv.{i}.b")
    if model.use_fusion:
        for i in range(model.cfg.fusion.num_layers):
            for head in ("q", "k", "v", "o"):
                names.add(f"layer.{i}.attn.{head}.w")
                names.add(f"layer.{i}.attn.{head}.b")
            names.update({f"layer.{i}.ffn.w1", f"layer.{i}.ffn.b1",
                          f"layer.{i}.ffn.w2", f"layer.{i}.ffn.b2"})
            names.update({f"layer.{i}.ln1.g", f"layer.{i}.ln1.b",
                          f"layer.{i}.ln2.g", f"layer.{i}.ln2.b"})
    if not model.use_fourier:
        names.add("pos_table")
    return names


def _step_category_subset(batch, cat_of, k, rng) -> np.ndarray:
    """Category channels to score this step: those present in the batch,
    padded with shuffled absent ones up to ``k`` (0 keeps every category)."""
    n_cats = len(cat_of)
    if not k or k >= n_cats:
        return np.arange(n_cats)
    present = sorted({cat_of[c] for s in batch for c in s.categories})
    if len(present) > k:
        present = [present[i] for i in rng.permutation(len(present))[:k]]
    filler = [i for i in range(n_cats) if i not in set(present)]
    extra = max(0, k - len(present))
    if extra:
        present = present + [filler[i] for i in rng.permutation(len(filler))[:extra]]
    return np.array(sorted(present))


def _audit_training_stream(samples: list[SegmentationSample], fold: FoldSpec) -> None:
    test = set(fold.test_categories)
    for s in samples:
        leaked = test & set(s.categories)
        if leaked:
            raise LeakedTestCategory(
                f"sample {s.sample_id} exposes held-out categories {sorted(leaked)} "
                f"to fold {fold.fold_index} training"
            )


def train(
    cfg: ExperimentConfig,
    train_samples: list[SegmentationSample],
    fold: FoldSpec,
    precomputed: PrecomputedEncoder | None = None,
) -> tuple[SegModel, TrainLog]:
    """Optimize alignment + fusion + decoder on one fold's training stream."""
    if not train_samples:
        raise EmptyDataset("training stream is empty")
    _audit_training_stream(train_samples, fold)

    started = time.perf_counter()
    model = SegModel(cfg, precomputed=precomputed)
    params = model.trainable_parameters()
    names = [n for n, _ in params]
    expected = expected_parameter_names(model)
    assert set(names) == expected, f"optimizer set mismatch: {set(names) ^ expected}"
    checksums_before = model.encoder_checksums()

    # category identities enter training only through the train split
    text = model.encode_categories(fold.train_categories)
    cached = model.precompute_visual(train_samples)
    targets = batch_targets(train_samples, fold.train_categories)
    cat_of = {name: i for i, name in enumerate(fold.train_categories)}

    opt = Adam(params, cfg.optimizer)
    order_rng = np.random.default_rng([cfg.seed, 0x0BA7C4])
    log = TrainLog(param_count=model.param_count)
    n = len(train_samples)
    n_cats = len(fold.train_categories)
    inv_tau = 1.0 / cfg.decoder.tau
    for _epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            keep = _step_category_subset(
                [train_samples[i] for i in idx], cat_of, cfg.categories_per_step, order_rng
            )
            step_text = TextFeatures(
                T.Tensor(text.embeddings.data[keep]),
                tuple(fold.train_categories[k] for k in keep),
            )
            try:
                logits = model.logits_for_batch(cached[idx], step_text)
                loss = T.bce_with_logits(
                    T.mul(logits, inv_tau),
                    T.Tensor(targets[np.ix_(idx, keep)]),
                    pos_weight=cfg.loss_pos_weight,
                )
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergedLoss(f"loss became {value} at step {len(log.step_losses)}")
                opt.zero_grad()
                loss.backward()
                opt.step()
            except NonFinite as exc:
                raise DivergedLoss(f"non-finite values during training: {exc}") from exc
            epoch_losses.append(value)
            log.step_losses.append(value)
        log.epoch_losses.append(float(np.mean(epoch_losses)))
        log.epoch_train_miou.append(
            _train_subset_miou(model, train_samples, cached, text, fold, cfg)
        )

    checksums_after = model.encoder_checksums()
    assert checksums_after == checksums_before, "frozen encoder weights changed"
    log.wall_seconds = time.perf_counter() - started
    return model, log


def _train_subset_miou(model, samples, cached, text, fold, cfg) -> float:
    k = min(cfg.train_miou_subset, len(samples))
    if k == 0:
        return 0.0
    logits = model.logits_for_batch(cached[:k], text)
    preds, gts = [], []
    for b in range(k):
        pred = predict_masks(logits.data[b], cfg.decoder, fold.train_categories)
        preds.append(pred.label_map)
        gts.append(gt_label_map(samples[b], fold.train_categories))
    return miou(preds, gts, fold.train_categories).miou


def evaluate(
    model: SegModel,
    fold: FoldSpec,
    test_samples: list[SegmentationSample],
    out_dir: str | Path | None = None,
    write_masks: bool = False,
) -> FoldReport:
    """Zero-shot inference over one fold's held-out categories.

    Pools per-class pixel counts over all images (optionally across
    BL_NUM_WORKERS threads; counts merge associatively so the result does
    not depend on scheduling). Optionally writes per-image IoU records as
    JSON lines plus prediction masks as PGMs.
    """
    if not test_samples:
        raise EmptyDataset("evaluation stream is empty")
    test_set = set(fold.test_categories)
    for s in test_samples:
        extra = set(s.categories) - test_set
        if extra:
            raise CategoryMismatch(
                f"sample {s.sample_id} holds non-test categories {sorted(extra)}"
            )
    cfg = model.cfg
    text = model.encode_categories(fold.test_categories)
    categories = fold.test_categories
    k = len(categories)

    workers = max(1, int(os.environ.get("BL_NUM_WORKERS", "1")))
    chunks = np.array_split(np.arange(len(test_samples)), min(workers, len(test_samples)))

    def run_chunk(idx):
        idx = list(idx)
        records = []
        batch = 16
        for start in range(0, len(idx), batch):
            part = [test_samples[i] for i in idx[start : start + batch]]
            cached = model.precompute_visual(part)
            logits = model.logits_for_batch(cached, text)
            for b, s in enumerate(part):
                pred = predict_masks(logits.data[b], cfg.decoder, categories)
                gt = gt_label_map(s, categories)
                records.append((s.sample_id, pred, gt))
        return records

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(chunks[0])]

    all_records = [r for chunk in results for r in chunk]
    all_records.sort(key=lambda r: r[0])
    report = miou(
        [pred.label_map for _, pred, _ in all_records],
        [gt for _, _, gt in all_records],
        categories,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metrics.jsonl", "w") as fh:
            for sample_id, pred, gt in all_records:
                counts = confusion_counts(pred.label_map, gt, k)
                per_class = {}
                for i, name in enumerate(categories):
                    tp, fp, fn = counts[i]
                    denom = tp + fp + fn
                    per_class[name] = 1.0 if denom == 0 else float(tp / denom)
                fh.write(json.dumps({"id": sample_id, "per_class_iou": per_class}) + "\n")
        if write_masks:
            for sample_id, pred, _ in all_records:
                write_prediction_pgms(pred, out_dir / "masks" / sample_id)
    return report


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model: SegModel, directory: str | Path) -> None:
    """Trainable parameters as tensor containers plus a config snapshot."""
    directory = Path(directory)
    save_archive(directory, {name: t.data for name, t in model.trainable_parameters()})
    (directory / "config.txt").write_text(dump_config(model.cfg))


def load_checkpoint(
    directory: str | Path,
    cfg: ExperimentConfig | None = None,
    precomputed: PrecomputedEncoder | None = None,
) -> SegModel:
    """Rebuild the model from a snapshot; shapes must match exactly."""
    directory = Path(directory)
    snapshot = load_config(directory / "config.txt")
    if cfg is not None and dump_config(cfg) != dump_config(snapshot):
        raise ConfigMismatch("requested config does not match checkpoint snapshot")
    model = SegModel(snapshot, precomputed=precomputed)
    stored = load_archive(directory)
    params = dict(model.trainable_parameters())
    if set(stored) != set(params):
        raise ConfigMismatch(
            f"checkpoint parameters {sorted(set(stored) ^ set(params))} do not match model"
        )
    for name, arr in stored.items():
        if params[name].shape != arr.shape:
            raise ConfigMismatch(
                f"checkpoint tensor {name} has shape {arr.shape}, model wants {params[name].shape}"
            )
        params[name].data[...] = arr
    return model


# -- ablation harness ---------------------------------------------------------

VARIANT_FLAGS = {
    "B_L_0": {"use_fourier": False, "use_fusion": False, "use_decoder": True},
    "B_L_1": {"use_fourier": True, "use_fusion": False, "use_decoder": True},
    "B_L_2": {"use_fourier": True, "use_fusion": True, "use_decoder": True},
}


@dataclass
class AblationResult:
    per_variant_fold_miou: dict[str, list[float]]
    per_variant_miou: dict[str, float]

    def table_rows(self) -> list[list[str]]:
        rows = []
        for variant in ("B_L_0", "B_L_1", "B_L_2"):
            vals = self.per_variant_fold_miou[variant]
            rows.append(
                [variant] + [f"{v:.4f}" for v in vals] + [f"{self.per_variant_miou[variant]:.4f}"]
            )
        return rows

    def format_table(self) -> str:
        header = ["model", "5_0", "5_1", "5_2", "5_3", "miou"]
        lines = ["\t".join(header)]
        lines += ["\t".join(row) for row in self.table_rows()]
        return "\n".join(lines) + "\n"


def run_ablation(
    cfg: ExperimentConfig,
    dataset: SyntheticDataset,
    folds: list[int] | None = None,
    log_fn=None,
) -> AblationResult:
    """Train and evaluate every variant on the same folds and seed."""
    from dataclasses import replace

    folds = list(folds) if folds is not None else [0, 1, 2, 3]
    per_fold: dict[str, list[float]] = {}
    for variant in ("B_L_0", "B_L_1", "B_L_2"):
        vcfg = replace(cfg, ablation_variant=variant)
        scores = []
        for fi in folds:
            fold = make_fold(fi, dataset.universe)
            train_stream, test_stream = dataset.split_for_fold(fold)
            model, _log = train(vcfg, train_stream, fold)
            report = evaluate(model, fold, test_stream)
            scores.append(report.miou)
            if log_fn:
                log_fn(f"{variant} fold {fi}: miou={report.miou:.4f}")
        per_fold[variant] = scores
    return AblationResult(
        per_variant_fold_miou=per_fold,
        per_variant_miou={v: float(np.mean(s)) for v, s in per_fold.items()},
    )
