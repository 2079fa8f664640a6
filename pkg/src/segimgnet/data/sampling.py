"""Class balancing and stratified cross-validation splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, DataError


def _class_members(labels: np.ndarray, num_classes: Optional[int]) -> List[np.ndarray]:
    K = int(labels.max()) + 1 if num_classes is None else num_classes
    members = [np.flatnonzero(labels == k) for k in range(K)]
    empty = [k for k, m in enumerate(members) if m.size == 0]
    if empty:
        raise DataError(f"class {empty[0]} has no samples")
    return members


def rose_oversample(ids: Sequence, labels: Sequence[int], rng: np.random.Generator,
                    num_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Random oversampling with replacement until every class has the majority count.

    Returns ``(ids, labels)``: all originals in input order, then the drawn
    duplicates class by class.
    """
    ids = np.asarray(ids)
    labels = np.asarray(labels, dtype=np.int64)
    if ids.shape != labels.shape or ids.ndim != 1:
        raise DataError(f"{ids.size} ids but {labels.size} labels")
    if ids.size == 0:
        raise DataError("cannot oversample an empty split")
    members = _class_members(labels, num_classes)
    target = max(m.size for m in members)
    extra = [rng.choice(m, size=target - m.size, replace=True) for m in members if m.size < target]
    pick = np.concatenate([np.arange(ids.size)] + extra).astype(np.int64)
    return ids[pick], labels[pick]


@dataclass(frozen=True)
class Fold:
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: Tuple[Fold, ...]

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed,
                "folds": [{"train": list(f.train), "val": list(f.val), "test": list(f.test)} for f in self.folds]}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        folds = tuple(Fold(tuple(f["train"]), tuple(f["val"]), tuple(f["test"])) for f in d["folds"])
        return cls(int(d["k"]), int(d["seed"]), folds)


def make_folds(ids: Sequence[str], labels: Sequence[int], k: int = 5, seed: int = 0,
               val_fraction: float = 0.25) -> FoldPlan:
    """Stratified k-fold test partition; the rest of each fold splits 3:1 into train:val per class.

    Within a class the shuffled members are dealt round-robin to the folds,
    and the dealing position carries over from one class to the next so fold
    sizes differ by at most one overall as well as per class.
    """
    if k < 2:
        raise ConfigurationError(f"need k >= 2 folds, got {k}")
    ids = np.asarray([str(i) for i in ids])
    labels = np.asarray(labels, dtype=np.int64)
    if ids.shape != labels.shape:
        raise DataError(f"{ids.size} ids but {labels.size} labels")
    if len(set(ids.tolist())) != ids.size:
        raise DataError("sample ids must be unique")
    members = _class_members(labels, None)
    small = [(c, m.size) for c, m in enumerate(members) if m.size < k]
    if small:
        raise DataError(f"class {small[0][0]} has {small[0][1]} samples, fewer than k={k}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    fold_of: Dict[int, List[List[int]]] = {c: [[] for _ in range(k)] for c in range(len(members))}
    start = 0
    for c, m in enumerate(members):
        for pos, idx in enumerate(rng.permutation(m)):
            fold_of[c][(start + pos) % k].append(int(idx))
        start = (start + m.size) % k
    folds = []
    for f in range(k):
        train, val, test = [], [], []
        for c in range(len(members)):
            test.extend(fold_of[c][f])
            rest = np.array(sorted(i for g in range(k) if g != f for i in fold_of[c][g]), dtype=np.int64)
            rest = rng.permutation(rest)
            n_val = int(round(rest.size * val_fraction))
            val.extend(rest[:n_val].tolist())
            train.extend(rest[n_val:].tolist())
        folds.append(Fold(*(tuple(ids[sorted(part)].tolist()) for part in (train, val, test))))
    return FoldPlan(k, seed, tuple(folds))
