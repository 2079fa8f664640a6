"""Feature-map dumps from the segmented-image encoder.

For one image, the post-gate map of a chosen encoder stage is reduced to four
channels: the two with the highest mean activation and the two with the
highest variance among the rest.  Each is min-max scaled to 8 bits and written
as a PGM next to a ``channels.csv`` index.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .autograd import Tensor, no_grad
from .classifier import SegImgNet
from .data.imageio import write_pgm
from .errors import UsageError


def stage_maps(model: SegImgNet, image: np.ndarray) -> List[np.ndarray]:
    """Per-stage C x h x w maps of the segmented-image encoder for one C x H x W image."""
    if not model.flags.use_seg_branch:
        raise UsageError("this model has no segmented-image encoder to visualize")
    x = Tensor(image[None].astype(np.float32))
    with no_grad():
        _, maps = model.logits(x, model.segment(x), return_maps=True)
    return [m.data[0] for m in maps]


def select_channels(fmap: np.ndarray, per_rule: int = 2) -> Tuple[List[int], List[str]]:
    """Top channels by mean, then by variance among those not already taken.

    Ties keep the lower channel index first.
    """
    flat = fmap.reshape(fmap.shape[0], -1).astype(np.float64)
    means, variances = flat.mean(axis=1), flat.var(axis=1)
    by_mean = [int(i) for i in np.argsort(-means, kind="stable")]
    by_var = [int(i) for i in np.argsort(-variances, kind="stable")]
    chosen = by_mean[:per_rule]
    chosen += [i for i in by_var if i not in chosen][:per_rule]
    return chosen, ["mean"] * per_rule + ["variance"] * (len(chosen) - per_rule)


def to_8bit(channel: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant channel maps to all zeros."""
    c = channel.astype(np.float64)
    lo, hi = c.min(), c.max()
    if hi == lo:
        return np.zeros(c.shape, np.uint8)
    return np.round((c - lo) / (hi - lo) * 255.0).astype(np.uint8)


def dump_features(model: SegImgNet, image: np.ndarray, stage: int, out_dir) -> List[Path]:
    """Write four channel PGMs and ``channels.csv`` for encoder ``stage`` (1-based)."""
    n_stages = len(model.config.encoder.depths)
    if not 1 <= stage <= n_stages:
        raise UsageError(f"stage {stage} out of range; valid stages are {', '.join(map(str, range(1, n_stages + 1)))}")
    fmap = stage_maps(model, image)[stage - 1]
    chosen, roles = select_channels(fmap)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flat = fmap.reshape(fmap.shape[0], -1).astype(np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("file", "channel", "rule", "mean", "variance"))
    paths = []
    for rank, (ch, role) in enumerate(zip(chosen, roles)):
        path = out_dir / f"stage{stage}_{rank}_ch{ch:03d}.pgm"
        write_pgm(path, to_8bit(fmap[ch]))
        paths.append(path)
        w.writerow((path.name, ch, role, repr(float(flat[ch].mean())), repr(float(flat[ch].var()))))
    (out_dir / "channels.csv").write_text(buf.getvalue())
    return paths
