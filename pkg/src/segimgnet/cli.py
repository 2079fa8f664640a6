"""Command-line entry point: ``segimgnet <subcommand> ...`` (or ``python -m segimgnet``)."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .classifier import VARIANTS, AblationFlags
from .config import Settings, add_override_flags, apply_overrides
from .data.imageio import read_ppm
from .data.sampling import make_folds
from .data.store import load_dataset, save_dataset
from .data.synth import SynthConfig, generate_dataset
from .errors import DataError, SegImgNetError, UsageError
from .features import dump_features
from .metrics import METRIC_COLUMNS, METRIC_TITLES, evaluate_scores, folds_csv
from .training import (ArrayDataset, SplitIndex, build_model, cross_validate, grid_search, leaderboard_csv,
                       load_model, load_segmenter, metrics_csv, predict_scores, run_ablations, save_segmenter,
                       worker_count)
from .unet import pretrain_segmenter

log = logging.getLogger("segimgnet")


def _settings(args) -> Settings:
    settings = Settings.load(args.config) if getattr(args, "config", None) else Settings()
    settings = apply_overrides(settings, args)
    if getattr(args, "unsafe_hyper", False):
        settings.set("train", "unsafe_hyper", True)
    return settings


def _dataset(path) -> ArrayDataset:
    return ArrayDataset.from_samples(load_dataset(path))


def _plan(settings: Settings, data: ArrayDataset):
    return make_folds(data.ids, data.labels, k=settings["data", "folds"], seed=settings["data", "fold_seed"])


def _seg_state(path, needed: bool):
    if path is None:
        if needed:
            raise UsageError("--seg-checkpoint is required for variants that use the segmentation branch")
        return None
    return load_segmenter(path)[0].state_dict()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    config = SynthConfig(seed=args.seed, n_per_class=(args.n_healthy, args.n_diseased), image_size=args.size)
    samples = generate_dataset(config, workers=worker_count())
    save_dataset(samples, args.out, config.to_dict())
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_pretrain_seg(args) -> int:
    settings = _settings(args)
    data = _dataset(args.data)
    if data.masks is None:
        raise DataError(f"{args.data}: segmentation pretraining needs vessel masks for every sample")
    model, report = pretrain_segmenter(data.images, data.masks, hyper=settings.pretrain_hyper(),
                                       config=settings.model_config().unet)
    out = Path(args.out) if args.out else settings.run_root() / "segmenter.sgnt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_segmenter(out, model, best_epoch=report.best_epoch, best_val_dice=report.best_val_dice)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "train_loss", "val_dice"))
    for h in report.history:
        w.writerow((h["epoch"], repr(h["train_loss"]), repr(h["val_dice"])))
    out.with_suffix(".csv").write_text(buf.getvalue())
    out.with_suffix(".ini").write_text(settings.to_text())
    print(f"best val Dice {report.best_val_dice:.4f} at epoch {report.best_epoch}; saved {out}")
    return 0


def _parse_folds(spec: str, k: int) -> List[int]:
    if spec == "all":
        return list(range(k))
    try:
        folds = [int(f) for f in spec.split(",")]
    except ValueError:
        raise UsageError(f"--fold takes 'all' or comma-separated fold indices, got {spec!r}") from None
    bad = [f for f in folds if not 0 <= f < k]
    if bad:
        raise UsageError(f"fold {bad[0]} out of range 0..{k - 1}")
    return folds


def cmd_train(args) -> int:
    settings = _settings(args)
    if args.flags:
        settings.set("model", "flags", args.flags)
    flags = settings.flags()
    data = _dataset(args.data)
    plan = _plan(settings, data)
    folds = _parse_folds(args.fold, plan.k)
    root = settings.run_root()
    snapshot = settings.to_text()
    for f in folds:
        _write(root / f"fold{f}" / "config.ini", snapshot)
    records = cross_validate(settings.model_config(), flags, settings.hyper(), data, plan,
                             _seg_state(args.seg_checkpoint, flags.use_seg_branch), root, folds, worker_count(),
                             header={"variant": flags.name})
    for r in records:
        print(f"fold {r.fold}: best epoch {r.best_epoch}, val AUC {r.best_val.auc:.4f}, test AUC {r.test.auc:.4f}")
    _write(root / "folds.csv", folds_csv([r.test for r in records], [f"fold{r.fold}" for r in records]))
    return 0


def cmd_evaluate(args) -> int:
    model, header = load_model(args.checkpoint)
    if args.flags is not None and AblationFlags.from_name(args.flags) != model.flags:
        raise UsageError(f"checkpoint was trained as variant {model.flags.name!r}, not {args.flags!r}; "
                         "its disabled components have no weights to evaluate with")
    data = _dataset(args.data)
    if args.split == "all":
        idx = np.arange(len(data.ids))
    else:
        if "folds" not in header or "fold" not in header:
            raise UsageError("checkpoint carries no fold assignment; only --split all is available")
        plan = make_folds(data.ids, data.labels, k=header["folds"]["k"], seed=header["folds"]["seed"])
        idx = SplitIndex.from_fold(data, plan.folds[header["fold"]]).get(args.split)
    scores = predict_scores(model, data.images[idx])
    report = evaluate_scores(scores, data.labels[idx])
    for title, key in zip(METRIC_TITLES, METRIC_COLUMNS):
        value = getattr(report, key)
        print(f"{title:12s} {'n/a' if value is None else f'{value:.4f}'}")
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"eval_{args.split}.csv")
    _write(out, metrics_csv({args.split: report}))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("id", "label", "score"))
    for i, s in zip(idx, scores):
        w.writerow((data.ids[i], int(data.labels[i]), repr(float(s))))
    out.with_name(out.stem + "_scores.csv").write_text(buf.getvalue())
    return 0


def cmd_ablate(args) -> int:
    settings = _settings(args)
    data = _dataset(args.data)
    plan = _plan(settings, data)
    variants = args.variants.split(",") if args.variants else None
    seg_state = _seg_state(args.seg_checkpoint, True)
    root = settings.run_root()
    _write(root / "config.ini", settings.to_text())
    kwargs = {} if variants is None else {"variants": variants}
    _, table = run_ablations(settings.model_config(), settings.hyper(), data, plan, seg_state, root,
                             workers=worker_count(), **kwargs)
    print(table, end="")
    return 0


def cmd_grid(args) -> int:
    settings = _settings(args)
    flags = settings.flags()
    data = _dataset(args.data)
    plan = _plan(settings, data)
    root = settings.run_root() / "grid"
    best, board = grid_search(settings.model_config(), flags, settings.grid(), data, plan,
                              _seg_state(args.seg_checkpoint, flags.use_seg_branch), root, worker_count())
    _write(root / "leaderboard.csv", leaderboard_csv(board))
    for key in ("lr", "batch", "disease_weight"):
        settings.set("train", key, getattr(best, key))
    _write(root / "best.ini", settings.to_text())
    print(leaderboard_csv(board), end="")
    return 0


def cmd_dump_features(args) -> int:
    model, _ = load_model(args.checkpoint)
    if args.data:
        samples = {s.id: s for s in load_dataset(args.data)}
        if args.sample not in samples:
            raise DataError(f"sample {args.sample!r} is not in {args.data}")
        image = samples[args.sample].image
    else:
        path = Path(args.sample)
        if not path.is_file():
            raise DataError(f"{path}: no such image (pass --data to look the sample up by id)")
        image = read_ppm(path)
    paths = dump_features(model, image, args.stage, args.out)
    for p in paths:
        print(p)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segimgnet", allow_abbrev=False, formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Segmentation-guided retinal image classification on synthetic fundus data.",
        epilog="exit codes: 0 ok, 2 usage or config error, 3 data error, 4 numeric failure\n"
               "SEGNET_THREADS caps worker processes (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        p.set_defaults(fn=fn)
        return p

    def configured(p):
        p.add_argument("--config", help="config file with [data], [model] and [train] sections")
        p.add_argument("--unsafe-hyper", action="store_true",
                       help="accept lr, batch or disease weight outside the searched ranges")
        add_override_flags(p)

    p = command("gen-data", cmd_gen_data, "generate a synthetic fundus dataset (PPM images, PGM masks)")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--n-healthy", type=int, default=857, help="number of healthy images")
    p.add_argument("--n-diseased", type=int, default=143, help="number of diseased images")
    p.add_argument("--size", type=int, default=64, help="image side in pixels")

    p = command("pretrain-seg", cmd_pretrain_seg, "pretrain the U-Net segmenter on the dataset's vessel masks")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", help="checkpoint path (default <runs>/<name>/segmenter.sgnt)")
    configured(p)

    p = command("train", cmd_train, "train the classifier on one or more cross-validation folds")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--seg-checkpoint", help="pretrained segmenter checkpoint")
    p.add_argument("--fold", default="all", help="fold index, comma-separated indices, or 'all'")
    p.add_argument("--flags", choices=list(VARIANTS), help="model variant (overrides model.flags)")
    configured(p)

    p = command("evaluate", cmd_evaluate, "evaluate a classifier checkpoint without augmentation or oversampling")
    p.add_argument("--checkpoint", required=True, help="classifier checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"),
                   help="split of the checkpoint's fold to score")
    p.add_argument("--flags", choices=list(VARIANTS), help="refuse unless the checkpoint is this variant")
    p.add_argument("--out", help="metrics CSV path (default eval_<split>.csv beside the checkpoint)")

    p = command("ablate", cmd_ablate, "train every ablation variant on all folds and tabulate test metrics")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--seg-checkpoint", help="pretrained segmenter checkpoint")
    p.add_argument("--variants", help="comma-separated subset of " + ", ".join(VARIANTS))
    configured(p)

    p = command("grid", cmd_grid, "grid-search lr, batch and disease weight on the first fold")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--seg-checkpoint", help="pretrained segmenter checkpoint")
    configured(p)

    p = command("dump-features", cmd_dump_features, "write four channels of an encoder stage's feature map as PGM")
    p.add_argument("--checkpoint", required=True, help="classifier checkpoint")
    p.add_argument("--sample", required=True, help="sample id (with --data) or path to a PPM image")
    p.add_argument("--data", help="dataset directory to look the sample up in")
    p.add_argument("--stage", type=int, default=2, help="encoder stage, 1-based (default 2)")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except SegImgNetError as e:
        print(f"segimgnet {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"segimgnet {args.command}: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
