"""Four-fold category splits over a 20-name universe.

Fold i holds out five test categories; the remaining fifteen are the
training categories. For the standard 20-category VOC universe the splits
are the canonical published ones; any other 20-name universe is split by
position: fold i tests indices 5i..5i+4 in the given canonical order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import BadFoldIndex, BadUniverse

PASCAL_CATEGORIES = (
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "potted plant",
    "sheep",
    "sofa",
    "train",
    "tv/monitor",
)

NUM_FOLDS = 4
FOLD_SIZE = 5


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    test_categories: tuple[str, ...]
    train_categories: tuple[str, ...]


def make_fold(i: int, universe) -> FoldSpec:
    """Fold ``i`` of a 20-category universe."""
    if not isinstance(i, int) or not 0 <= i < NUM_FOLDS:
        raise BadFoldIndex(f"fold index must be 0..3, got {i!r}")
    universe = tuple(universe)
    if len(universe) != NUM_FOLDS * FOLD_SIZE or len(set(universe)) != len(universe):
        raise BadUniverse(f"universe must hold 20 distinct names, got {len(universe)}")
    if set(universe) == set(PASCAL_CATEGORIES):
        universe = PASCAL_CATEGORIES
    test = universe[FOLD_SIZE * i : FOLD_SIZE * (i + 1)]
    train = tuple(c for c in universe if c not in test)
    return FoldSpec(fold_index=i, test_categories=test, train_categories=train)


def all_folds(universe) -> list[FoldSpec]:
    return [make_fold(i, universe) for i in range(NUM_FOLDS)]


def folds_to_json(universe) -> str:
    """Fold definitions as JSON for inspection or export."""
    payload = [
        {
            "fold": f.fold_index,
            "test_categories": list(f.test_categories),
            "train_categories": list(f.train_categories),
        }
        for f in all_folds(universe)
    ]
    return json.dumps(payload, indent=2)
