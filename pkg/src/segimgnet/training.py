"""Classifier training protocol: ROSE-balanced epochs, early stopping on validation AUC,
grid search, cross-validation and ablation runs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .autograd import Adam, Tensor, no_grad
from .classifier import VARIANT_TITLES, VARIANTS, AblationFlags, ModelConfig, SegImgNet
from .data.sampling import Fold, FoldPlan, rose_oversample
from .data.transforms import apply_augment, draw_augment
from .errors import ConfigurationError, DataError, NumericError
from .losses import ClassWeights, one_hot, wce_loss
from .metrics import METRIC_COLUMNS, METRIC_TITLES, MetricsReport, evaluate_scores, mean_std_cell, summarize
from .unet import SegOutput, UNet, UNetConfig

log = logging.getLogger(__name__)

LR_RANGE = (5e-5, 1e-3)
BATCH_SIZES = (16, 32, 64, 128)
DISEASE_WEIGHTS = (0.5, 0.6, 0.7, 0.8, 0.9)
MAX_EPOCHS = 200
AUGMENT_MODES = ("full", "flips", "none")
EVAL_BATCH = 64


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 5e-4
    batch: int = 32
    disease_weight: float = 0.7
    max_epochs: int = MAX_EPOCHS
    patience: int = 20
    seed: int = 0
    augment: str = "full"   # full: flip + crop + scale; flips: flips only; none
    unsafe: bool = False    # skip the range checks on lr, batch and disease weight

    def __post_init__(self):
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.batch < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError("batch, max_epochs and patience must all be >= 1")
        if not 0 < self.disease_weight < 1:
            raise ConfigurationError(f"disease_weight must lie in (0, 1), got {self.disease_weight}")
        if self.augment not in AUGMENT_MODES:
            raise ConfigurationError(f"augment must be one of {', '.join(AUGMENT_MODES)}, got {self.augment!r}")
        if self.unsafe:
            return
        if not LR_RANGE[0] <= self.lr <= LR_RANGE[1]:
            raise ConfigurationError(f"lr {self.lr} outside [{LR_RANGE[0]}, {LR_RANGE[1]}] (pass unsafe to allow)")
        if self.batch not in BATCH_SIZES:
            raise ConfigurationError(f"batch {self.batch} not in {BATCH_SIZES} (pass unsafe to allow)")
        if not any(abs(self.disease_weight - w) < 1e-9 for w in DISEASE_WEIGHTS):
            raise ConfigurationError(
                f"disease_weight {self.disease_weight} not in {DISEASE_WEIGHTS} (pass unsafe to allow)")
        if self.max_epochs > MAX_EPOCHS:
            raise ConfigurationError(f"max_epochs {self.max_epochs} above {MAX_EPOCHS} (pass unsafe to allow)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


class EarlyStopping:
    """Stop once the criterion has not improved for ``patience`` consecutive epochs.

    The first epoch always counts as an improvement, so a criterion that only
    ever gets worse stops training after ``patience + 1`` epochs.
    """

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigurationError("patience must be >= 1")
        self.patience = patience
        self.epoch = 0
        self.best = -math.inf
        self.best_epoch = 0
        self.stale = 0

    def step(self, value: float) -> bool:
        """Record one epoch; True means an improvement. Check ``should_stop`` afterwards."""
        self.epoch += 1
        if value > self.best:
            self.best, self.best_epoch, self.stale = value, self.epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


# -- data views ---------------------------------------------------------------

@dataclass
class ArrayDataset:
    ids: np.ndarray       # N strings
    images: np.ndarray    # N x C x H x W float32
    labels: np.ndarray    # N int64
    masks: Optional[np.ndarray] = None

    @classmethod
    def from_samples(cls, samples) -> "ArrayDataset":
        if not samples:
            raise DataError("empty dataset")
        shapes = {s.image.shape for s in samples}
        if len(shapes) != 1:
            raise DataError(f"images have differing shapes {sorted(shapes)}")
        images = np.stack([s.image for s in samples]).astype(np.float32)
        masks = np.stack([s.mask for s in samples]) if all(s.mask is not None for s in samples) else None
        return cls(np.array([s.id for s in samples]), images,
                   np.array([s.label for s in samples], dtype=np.int64), masks)

    def indices(self, ids: Sequence[str]) -> np.ndarray:
        pos = {sid: i for i, sid in enumerate(self.ids.tolist())}
        try:
            return np.array([pos[i] for i in ids], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"sample {e.args[0]!r} is not in the dataset") from None


@dataclass
class SplitIndex:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @classmethod
    def from_fold(cls, data: ArrayDataset, fold: Fold) -> "SplitIndex":
        return cls(data.indices(fold.train), data.indices(fold.val), data.indices(fold.test))

    def get(self, name: str) -> np.ndarray:
        if name == "all":
            return np.sort(np.concatenate([self.train, self.val, self.test]))
        if name not in ("train", "val", "test"):
            raise ConfigurationError(f"split must be train, val, test or all, got {name!r}")
        return getattr(self, name)


class SegBank:
    """Frozen segmenter outputs for a fixed image array, stored as numpy."""

    def __init__(self, seg_image: np.ndarray, taps: List[np.ndarray]):
        self.seg_image = seg_image
        self.taps = taps

    @classmethod
    def compute(cls, model: UNet, images: np.ndarray, batch: int = EVAL_BATCH) -> "SegBank":
        segs, taps = [], []
        with no_grad():
            for s in range(0, len(images), batch):
                out = model(Tensor(images[s:s + batch]))
                segs.append(out.seg_image.data)
                taps.append([t.data for t in out.taps])
        return cls(np.concatenate(segs), [np.concatenate(level) for level in zip(*taps)])

    def take(self, idx) -> SegOutput:
        return SegOutput(Tensor(self.seg_image[idx]), [Tensor(t[idx]) for t in self.taps])


def flip_images(images: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Flip state bit 0 mirrors columns, bit 1 mirrors rows."""
    out = images.copy()
    for i, s in enumerate(states):
        if s & 1:
            out[i] = out[i][..., ::-1]
        if s & 2:
            out[i] = out[i][..., ::-1, :]
    return out


class FlipBank:
    """Segmenter outputs of every training image under each of the four flip states.

    With a frozen segmenter, flip-only augmentation can then reuse these instead
    of running the U-Net on every batch.
    """

    def __init__(self, model: UNet, images: np.ndarray, states: Sequence[int] = (0, 1, 2, 3)):
        self.states = tuple(states)
        banks = [SegBank.compute(model, flip_images(images, np.full(len(images), s))) for s in self.states]
        self.seg_image = np.stack([b.seg_image for b in banks])
        self.taps = [np.stack([b.taps[k] for b in banks]) for k in range(len(banks[0].taps))]

    def take(self, idx: np.ndarray, states: np.ndarray) -> SegOutput:
        slot = np.searchsorted(self.states, states)
        return SegOutput(Tensor(self.seg_image[slot, idx]), [Tensor(t[slot, idx]) for t in self.taps])


def predict_scores(model: SegImgNet, images: np.ndarray, bank: Optional[SegBank] = None,
                   batch: int = EVAL_BATCH) -> np.ndarray:
    """Disease probability per image; no augmentation. ``bank`` caches the frozen segmenter."""
    if bank is None and model.needs_segmentation:
        bank = SegBank.compute(model.seg, images, batch)
    scores = []
    with no_grad():
        for s in range(0, len(images), batch):
            seg = bank.take(slice(s, s + batch)) if model.needs_segmentation else None
            scores.append(model.classify(Tensor(images[s:s + batch]), seg).data[:, 1])
    return np.concatenate(scores)


# -- records and files --------------------------------------------------------

@dataclass
class RunRecord:
    fold: int
    hyper: Hyperparams
    flags: AblationFlags
    history: List[Dict[str, float]]
    best_epoch: int
    best_val: MetricsReport
    test: Optional[MetricsReport]
    checkpoint: Optional[str]
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        """Everything except the wall time; the checkpoint is named relative to the fold directory."""
        return {"fold": self.fold, "hyper": self.hyper.to_dict(), "flags": self.flags.name,
                "history": self.history, "best_epoch": self.best_epoch, "best_val": self.best_val.as_dict(),
                "test": None if self.test is None else self.test.as_dict(),
                "checkpoint": None if self.checkpoint is None else Path(self.checkpoint).name}


EPOCH_COLUMNS = ("epoch", "train_loss", "criterion") + tuple(f"val_{k}" for k in METRIC_COLUMNS)


def epochs_csv(history: Sequence[Dict[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_COLUMNS)
    for row in history:
        w.writerow(["" if row.get(k) is None else repr(row[k]) for k in EPOCH_COLUMNS])
    return buf.getvalue()


def metrics_csv(rows: Dict[str, MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("split",) + METRIC_TITLES + ("n_pos", "n_neg"))
    for name, rep in rows.items():
        w.writerow([name] + ["" if v is None else repr(float(v)) for v in rep.values()] + [rep.n_pos, rep.n_neg])
    return buf.getvalue()


def model_header(model: SegImgNet, **extra) -> dict:
    return {"kind": "classifier", "model": model.config.to_dict(), "flags": asdict(model.flags), **extra}


def save_model(path, model: SegImgNet, **extra) -> None:
    checkpoint.save(path, model.state_dict(), model_header(model, **extra))


def load_model(path) -> Tuple[SegImgNet, dict]:
    tensors, header = checkpoint.load(path)
    if header.get("kind") != "classifier":
        raise DataError(f"{path} is not a classifier checkpoint (kind {header.get('kind')!r})")
    model = SegImgNet(ModelConfig.from_dict(header["model"]), AblationFlags(**header["flags"]))
    model.load_state_dict(tensors)
    return model, header


def save_segmenter(path, model: UNet, **extra) -> None:
    checkpoint.save(path, model.state_dict(), {"kind": "segmenter", "unet": asdict(model.config), **extra})


def load_segmenter(path) -> Tuple[UNet, dict]:
    tensors, header = checkpoint.load(path)
    if header.get("kind") != "segmenter":
        raise DataError(f"{path} is not a segmentation checkpoint (kind {header.get('kind')!r})")
    model = UNet(UNetConfig(**header["unet"]))
    model.load_state_dict(tensors)
    return model, header


def build_model(config: ModelConfig, flags: AblationFlags, seed: int,
                seg_state: Optional[Dict[str, np.ndarray]] = None) -> SegImgNet:
    model = SegImgNet(config, flags, seed)
    if seg_state is not None:
        model.seg.load_state_dict(seg_state)
    return model


# -- training -----------------------------------------------------------------

Criterion = Callable[[int, MetricsReport], float]


def val_auc(epoch: int, report: MetricsReport) -> float:
    return report.auc


def train_fold(model: SegImgNet, data: ArrayDataset, split: SplitIndex, hyper: Hyperparams,
               fold: int = 0, run_dir=None, criterion: Criterion = val_auc,
               header_extra: Optional[dict] = None, evaluate_test: bool = True,
               bank_cache: Optional[dict] = None) -> RunRecord:
    """Train ``model`` in place on one fold and leave it holding the best-validation weights.

    With ``run_dir`` the fold directory receives ``epochs.csv``, ``metrics.csv``,
    ``record.json``, ``best.sgnt`` and ``last.sgnt``.  ``bank_cache`` may be shared
    by runs with the same frozen segmenter weights and split, so the segmenter
    outputs are computed once.
    """
    t0 = time.perf_counter()
    K = model.config.num_classes
    if K != 2:
        raise ConfigurationError("the training protocol scores binary tasks (num_classes = 2)")
    rng = np.random.default_rng([hyper.seed, fold, 17])
    weights = ClassWeights.from_disease_weight(hyper.disease_weight)
    opt = Adam(model.trainable_parameters(), lr=hyper.lr)
    train_labels = data.labels[split.train]
    val_images = data.images[split.val]
    frozen = not model.config.finetune_seg
    needs_seg = model.needs_segmentation
    cache = {} if bank_cache is None else bank_cache
    val_bank = bank = None
    if needs_seg and frozen:
        if "val" not in cache:
            cache["val"] = SegBank.compute(model.seg, val_images)
        val_bank = cache["val"]
        if hyper.augment != "full":
            if hyper.augment not in cache:
                states = (0, 1, 2, 3) if hyper.augment == "flips" else (0,)
                cache[hyper.augment] = FlipBank(model.seg, data.images[split.train], states)
            bank = cache[hyper.augment]

    stopper = EarlyStopping(hyper.patience)
    history: List[Dict[str, float]] = []
    best_state, best_val = model.state_dict(), None
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    header = dict(header_extra or {}, fold=fold, hyper=hyper.to_dict())

    for epoch in range(1, hyper.max_epochs + 1):
        pos, ybal = rose_oversample(np.arange(split.train.size), train_labels, rng, num_classes=K)
        order = rng.permutation(pos.size)
        pos, ybal = pos[order], ybal[order]
        losses = []
        for s in range(0, pos.size, hyper.batch):
            bpos, yb = pos[s:s + hyper.batch], ybal[s:s + hyper.batch]
            xb = data.images[split.train[bpos]]
            seg = None
            if hyper.augment == "full":
                xb = np.stack([apply_augment(img, None, draw_augment(rng))[0] for img in xb])
            elif hyper.augment == "flips":
                states = rng.integers(0, 4, size=bpos.size)
                xb = flip_images(xb, states)
                if bank is not None:
                    seg = bank.take(bpos, states)
            elif bank is not None:
                seg = bank.take(bpos, np.zeros(bpos.size, np.int64))
            x = Tensor(np.ascontiguousarray(xb))
            if needs_seg and seg is None:
                seg = model.segment(x)
            opt.zero_grad()
            loss = wce_loss(model.classify(x, seg), one_hot(yb, K), weights)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss {value} at fold {fold} epoch {epoch} batch {s // hyper.batch}: "
                    f"lr={hyper.lr}, batch of {bpos.size} with {int(yb.sum())} diseased, "
                    f"input mean {float(xb.mean()):.4g} std {float(xb.std()):.4g}")
            loss.backward()
            opt.step()
            losses.append(value)
        rep = evaluate_scores(predict_scores(model, val_images, val_bank), data.labels[split.val])
        crit = criterion(epoch, rep)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "criterion": float(crit),
                        **{f"val_{k}": getattr(rep, k) for k in METRIC_COLUMNS}})
        improved = stopper.step(crit)
        log.info("fold %d epoch %d loss %.4f val auc %.4f%s", fold, epoch, history[-1]["train_loss"],
                 rep.auc, " *" if improved else "")
        if improved:
            best_state, best_val = model.state_dict(), rep
            if run_dir is not None:
                save_model(run_dir / "best.sgnt", model, epoch=epoch, val_metrics=rep.as_dict(), **header)
        if stopper.should_stop:
            break

    if run_dir is not None:
        save_model(run_dir / "last.sgnt", model, epoch=len(history), **header)
    model.load_state_dict(best_state)
    test = None
    if evaluate_test:
        test_bank = None
        if needs_seg and frozen:
            if "test" not in cache:
                cache["test"] = SegBank.compute(model.seg, data.images[split.test])
            test_bank = cache["test"]
        test = evaluate_scores(predict_scores(model, data.images[split.test], test_bank), data.labels[split.test])
    record = RunRecord(fold, hyper, model.flags, history, stopper.best_epoch, best_val, test,
                       str(run_dir / "best.sgnt") if run_dir is not None else None,
                       time.perf_counter() - t0)
    if run_dir is not None:
        (run_dir / "epochs.csv").write_text(epochs_csv(history))
        rows = {"val": best_val} if test is None else {"val": best_val, "test": test}
        (run_dir / "metrics.csv").write_text(metrics_csv(rows))
        (run_dir / "record.json").write_text(json.dumps(record.to_dict(), sort_keys=True, indent=1) + "\n")
    return record


# -- parallel jobs ------------------------------------------------------------

def worker_count() -> int:
    """Worker processes allowed by ``SEGNET_THREADS`` (default 1)."""
    raw = os.environ.get("SEGNET_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"SEGNET_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("SEGNET_THREADS must be >= 1")
    return n


def parallel_map(fn, items: Sequence, workers: int = 1) -> list:
    """Ordered map; independent jobs run in subprocesses when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


@dataclass
class FoldJob:
    config: ModelConfig
    flags: AblationFlags
    hyper: Hyperparams
    seg_state: Optional[Dict[str, np.ndarray]]
    data: ArrayDataset
    plan: FoldPlan
    fold: int
    run_dir: Optional[str]
    header: dict

    def __call__(self) -> RunRecord:
        model = build_model(self.config, self.flags, self.hyper.seed, self.seg_state)
        split = SplitIndex.from_fold(self.data, self.plan.folds[self.fold])
        return train_fold(model, self.data, split, self.hyper, self.fold, self.run_dir,
                          header_extra=self.header)


def _run_job(job: FoldJob) -> RunRecord:
    return job()


def cross_validate(config: ModelConfig, flags: AblationFlags, hyper: Hyperparams, data: ArrayDataset,
                   plan: FoldPlan, seg_state=None, run_root=None, folds: Optional[Sequence[int]] = None,
                   workers: int = 1, header: Optional[dict] = None) -> List[RunRecord]:
    folds = range(plan.k) if folds is None else folds
    base = dict(header or {}, folds={"k": plan.k, "seed": plan.seed})
    jobs = [FoldJob(config, flags, hyper, seg_state, data, plan, f,
                    None if run_root is None else str(Path(run_root) / f"fold{f}"), base) for f in folds]
    return parallel_map(_run_job, jobs, workers)


# -- grid search --------------------------------------------------------------

@dataclass
class GridEntry:
    hyper: Hyperparams
    val_auc: Optional[float]   # None when training diverged
    best_epoch: int
    status: str


def grid_order(entry: GridEntry):
    auc = -math.inf if entry.val_auc is None else entry.val_auc
    h = entry.hyper
    return (-auc, h.lr, h.batch, repr(h.disease_weight))


def expand_grid(base: Hyperparams, lrs: Sequence[float], batches: Sequence[int],
                weights: Sequence[float]) -> List[Hyperparams]:
    grid = [replace(base, lr=float(lr), batch=int(b), disease_weight=float(w))
            for lr in lrs for b in batches for w in weights]
    if not grid:
        raise ConfigurationError("empty hyperparameter grid")
    return grid


def grid_search(config: ModelConfig, flags: AblationFlags, grid: Sequence[Hyperparams], data: ArrayDataset,
                plan: FoldPlan, seg_state=None, run_root=None, workers: int = 1) -> Tuple[Hyperparams, List[GridEntry]]:
    """Train each setting on the first fold's train/val split and rank by validation AUC.

    Ties go to the lower learning rate, then the smaller batch, then the smaller
    disease weight.  A diverged run (non-finite loss) ranks last.
    """
    if not grid:
        raise ConfigurationError("empty hyperparameter grid")
    jobs = [(config, flags, h, seg_state, data, plan,
             None if run_root is None else str(Path(run_root) / f"cell{i}")) for i, h in enumerate(grid)]
    entries = parallel_map(_grid_cell, jobs, workers)
    board = sorted(entries, key=grid_order)
    return board[0].hyper, board


def _grid_cell(job) -> GridEntry:
    config, flags, hyper, seg_state, data, plan, run_dir = job
    model = build_model(config, flags, hyper.seed, seg_state)
    split = SplitIndex.from_fold(data, plan.folds[0])
    try:
        rec = train_fold(model, data, split, hyper, 0, run_dir, evaluate_test=False)
    except NumericError as e:
        log.warning("grid cell lr=%g batch=%d weight=%g diverged: %s", hyper.lr, hyper.batch, hyper.disease_weight, e)
        return GridEntry(hyper, None, 0, "diverged")
    return GridEntry(hyper, rec.best_val.auc, rec.best_epoch, "ok")


def leaderboard_csv(board: Sequence[GridEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("rank", "lr", "batch", "disease_weight", "val_auc", "best_epoch", "status"))
    for i, e in enumerate(board, start=1):
        w.writerow((i, repr(e.hyper.lr), e.hyper.batch, repr(e.hyper.disease_weight),
                    "" if e.val_auc is None else repr(e.val_auc), e.best_epoch, e.status))
    return buf.getvalue()


# -- ablations ----------------------------------------------------------------

ABLATION_ORDER = ("no-seg", "no-raw", "no-sga", "full")


def check_isolation(model: SegImgNet, images: np.ndarray, seed: int = 0) -> None:
    """Perturbation probe: a disabled input must not move the output by a single bit."""
    rng = np.random.default_rng(seed)
    x = Tensor(images)
    with no_grad():
        seg = model.segment(x) if model.needs_segmentation else None
        ref = model.classify(x, seg).data
        if not model.flags.use_sga and seg is not None:
            noisy = SegOutput(seg.seg_image, [Tensor(t.data + rng.standard_normal(t.shape).astype(t.dtype))
                                              for t in seg.taps])
            if not np.array_equal(model.classify(x, noisy).data, ref):
                raise ConfigurationError("variant without SGA still reacts to the segmentation taps")
        if not model.flags.use_raw_branch:
            other = Tensor(rng.random(images.shape).astype(images.dtype))
            if not np.array_equal(model.classify(other, seg).data, ref):
                raise ConfigurationError("variant without the raw branch still reacts to raw pixels")
        if not model.flags.use_seg_branch:
            if not np.array_equal(model.classify(x, None).data, ref):
                raise ConfigurationError("variant without the segmented branch depends on segmentation")


def ablation_csv(results: Dict[str, Sequence[MetricsReport]]) -> str:
    """One row per variant, each metric as mean±std over folds."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model",) + METRIC_TITLES)
    for name in ABLATION_ORDER:
        if name in results:
            w.writerow([VARIANT_TITLES[name]] + [mean_std_cell(m, s) for m, s in summarize(results[name])])
    return buf.getvalue()


def run_ablations(config: ModelConfig, hyper: Hyperparams, data: ArrayDataset, plan: FoldPlan, seg_state=None,
                  run_root=None, variants: Sequence[str] = ABLATION_ORDER, folds: Optional[Sequence[int]] = None,
                  workers: int = 1) -> Tuple[Dict[str, List[RunRecord]], str]:
    """Train every variant on identical folds, seeds and hyperparameters."""
    probe = data.images[:2]
    records: Dict[str, List[RunRecord]] = {}
    for name in variants:
        flags = VARIANTS[name] if name in VARIANTS else AblationFlags.from_name(name)
        check_isolation(build_model(config, flags, hyper.seed, seg_state), probe)
        root = None if run_root is None else Path(run_root) / name
        records[name] = cross_validate(config, flags, hyper, data, plan, seg_state, root, folds, workers,
                                       header={"variant": name})
    table = ablation_csv({k: [r.test for r in v] for k, v in records.items()})
    if run_root is not None:
        Path(run_root).mkdir(parents=True, exist_ok=True)
        (Path(run_root) / "ablations.csv").write_text(table)
    return records, table

