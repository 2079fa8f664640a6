"""U-Net segmenter that also exposes its decoder feature maps as multi-scale taps.

Encoder level ``i`` (0..L) works at H/2^i with ``base_width * 2^(i-1)``
channels, so level 0 has ``base_width // 2`` channels and level L is the
bottleneck.  The decoder walks back up; the fused decoder map at level ``i``
(1..L, the bottleneck itself for L) is tap ``i``: shape C_i x H/2^i x W/2^i
with C_i = base_width * 2^(i-1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autograd import Adam, Conv2d, GroupNorm, Module, Tensor, no_grad, ops
from .errors import ConfigurationError, DataError
from .losses import bce_with_logits, soft_dice_loss
from .metrics import dice

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 1
    levels: int = 4
    base_width: int = 16

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigurationError(f"UNetConfig.levels must be >= 1, got {self.levels}")
        if self.base_width < 2 or self.base_width % 2:
            raise ConfigurationError(f"UNetConfig.base_width must be an even number >= 2, got {self.base_width}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("UNetConfig channel counts must be positive")

    def level_widths(self) -> List[int]:
        """Channels at encoder/decoder levels 0..L."""
        return [self.base_width // 2] + [self.base_width * 2 ** (i - 1) for i in range(1, self.levels + 1)]

    def tap_widths(self) -> List[int]:
        return self.level_widths()[1:]


@dataclass
class SegOutput:
    seg_image: Tensor          # N x C_seg x H x W, sigmoid probabilities
    taps: List[Tensor]         # taps[i-1] is N x C_i x H/2^i x W/2^i
    logits: Optional[Tensor] = field(default=None, repr=False)

    def detach(self) -> "SegOutput":
        return SegOutput(self.seg_image.detach(), [t.detach() for t in self.taps],
                         None if self.logits is None else self.logits.detach())


GROUP_CHANNELS = 8


def norm_groups(channels: int) -> int:
    """Groups of 8 channels; narrower layers use a single group."""
    return max(1, channels // GROUP_CHANNELS) if channels % GROUP_CHANNELS == 0 else 1


class ConvBlock(Module):
    """(conv3x3 -> group norm -> ReLU) x 2.

    Group norm rather than a per-pixel channel norm: the top levels are only a
    few channels wide, and normalizing 2-4 values per pixel erases most of them.
    """

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, padding=1)
        self.norm1 = GroupNorm(out_ch, norm_groups(out_ch))
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=1)
        self.norm2 = GroupNorm(out_ch, norm_groups(out_ch))

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.norm1(self.conv1(x)))
        return ops.relu(self.norm2(self.conv2(x)))


class UNet(Module):
    def __init__(self, config: UNetConfig = UNetConfig(), rng: Optional[np.random.Generator] = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = config
        w = config.level_widths()
        self.enc = [ConvBlock(config.in_channels if i == 0 else w[i - 1], w[i], rng)
                    for i in range(config.levels + 1)]
        # up[i] lifts level i+1 to level i; dec[i] fuses it with the level-i skip
        self.up = [Conv2d(w[i + 1], w[i], 3, rng, padding=1) for i in range(config.levels)]
        self.dec = [ConvBlock(2 * w[i], w[i], rng) for i in range(config.levels)]
        self.head = Conv2d(w[0], config.out_channels, 1, rng)

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ConfigurationError(
                f"U-Net expects N x {self.config.in_channels} x H x W input, got {x.shape}")
        m = 2 ** self.config.levels
        H, W = x.shape[2:]
        if H % m or W % m:
            raise ConfigurationError(
                f"U-Net with {self.config.levels} levels needs H and W divisible by {m}, got {H}x{W}")

    def forward(self, x: Tensor, zero_skips: bool = False) -> SegOutput:
        """``zero_skips`` replaces the encoder skip features by zeros (wiring probe)."""
        self.check_input(x)
        L = self.config.levels
        skips = []
        h = x
        for i in range(L):
            h = self.enc[i](h)
            skips.append(h)
            h = ops.pool2d(h, "max", 2)
        h = self.enc[L](h)
        taps = [h]
        for i in range(L - 1, -1, -1):
            up = self.up[i](ops.upsample_nearest(h, 2))
            skip = skips[i]
            if zero_skips:
                skip = Tensor(np.zeros_like(skip.data), dtype=skip.dtype)
            h = self.dec[i](ops.concat_channels(skip, up))
            if i > 0:
                taps.append(h)
        taps.reverse()
        logits = self.head(h)
        return SegOutput(ops.sigmoid(logits), taps, logits)


unet_forward = UNet.forward


# -- pretraining ------------------------------------------------------------

@dataclass
class PretrainHyper:
    epochs: int = 30
    lr: float = 2e-3
    batch: int = 16
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class PretrainReport:
    best_epoch: int
    best_val_dice: float
    history: List[Dict[str, float]]
    state: Dict[str, np.ndarray] = field(repr=False)


def segmentation_loss(out: SegOutput, masks: Tensor) -> Tensor:
    """BCE + soft Dice with equal weights."""
    return bce_with_logits(out.logits, masks) + soft_dice_loss(out.seg_image, masks)


def predict_masks(model: UNet, images: np.ndarray, batch: int = 32) -> np.ndarray:
    probs = []
    with no_grad():
        for s in range(0, len(images), batch):
            probs.append(model(Tensor(images[s:s + batch])).seg_image.data[:, 0])
    return np.concatenate(probs)


def pretrain_segmenter(images: np.ndarray, masks: np.ndarray, model: Optional[UNet] = None,
                       hyper: PretrainHyper = PretrainHyper(), config: UNetConfig = UNetConfig()) -> tuple:
    """Fit the U-Net to (image, vessel mask) pairs and keep the best-validation-Dice weights.

    ``images`` is N x C x H x W in [0, 1]; ``masks`` is N x H x W with values in {0, 1}.
    Returns ``(model, report)`` with the model holding the best weights.
    """
    images = np.asarray(images, np.float32)
    masks = np.asarray(masks)
    if masks.shape != (images.shape[0],) + images.shape[2:]:
        raise DataError(f"masks {masks.shape} do not match images {images.shape}")
    if not np.isin(masks, (0, 1)).all():
        raise DataError("segmentation masks must be binary (values 0 or 1)")
    masks = masks.astype(np.float32)
    rng = np.random.default_rng(hyper.seed)
    if model is None:
        model = UNet(config, np.random.default_rng([hyper.seed, 1]))
    n = len(images)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * hyper.val_fraction)))
    val_idx, train_idx = np.sort(order[:n_val]), order[n_val:]
    opt = Adam(model.named_parameters(), lr=hyper.lr)

    best = (-1.0, -1, model.state_dict())
    history = []
    for epoch in range(1, hyper.epochs + 1):
        perm = rng.permutation(train_idx)
        losses = []
        for s in range(0, len(perm), hyper.batch):
            idx = perm[s:s + hyper.batch]
            xb, mb = images[idx], masks[idx]
            flip = rng.random(2) < 0.5
            if flip[0]:
                xb, mb = xb[..., ::-1], mb[..., ::-1]
            if flip[1]:
                xb, mb = xb[..., ::-1, :], mb[..., ::-1, :]
            opt.zero_grad()
            out = model(Tensor(np.ascontiguousarray(xb)))
            loss = segmentation_loss(out, Tensor(np.ascontiguousarray(mb[:, None])))
            loss.backward()
            opt.step()
            losses.append(loss.item())
        pred = predict_masks(model, images[val_idx]) >= 0.5
        val_dice = float(np.mean([dice(p, m) for p, m in zip(pred, masks[val_idx])]))
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_dice": val_dice})
        log.info("pretrain epoch %d loss %.4f val dice %.4f", epoch, history[-1]["train_loss"], val_dice)
        if val_dice > best[0]:
            best = (val_dice, epoch, model.state_dict())
    model.load_state_dict(best[2])
    return model, PretrainReport(best[1], best[0], history, best[2])
