"""Dual-branch classifier with segmentation-guided attention.

The segmented-image encoder consumes the U-Net probability map and, after
each stage's blocks, multiplies the stage output by a gate computed from the
matching U-Net tap: ``sigmoid(conv3x3(tap)) * h``.  The raw-image encoder has
the same topology, its own weights and no gates.  Embeddings of the enabled
branches are concatenated and classified by a one-hidden-layer MLP + softmax.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Conv2d, Dense, LayerNorm, Module, Tensor, no_grad, ops
from .errors import ConfigurationError
from .unet import SegOutput, UNet, UNetConfig


@dataclass(frozen=True)
class AblationFlags:
    use_seg_branch: bool = True
    use_raw_branch: bool = True
    use_sga: bool = True

    def __post_init__(self):
        if not (self.use_seg_branch or self.use_raw_branch):
            raise ConfigurationError("at least one of the segmented-image and raw-image branches must be enabled")

    @property
    def gated(self) -> bool:
        return self.use_seg_branch and self.use_sga

    @classmethod
    def from_name(cls, name: str) -> "AblationFlags":
        try:
            return VARIANTS[name]
        except KeyError:
            raise ConfigurationError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None

    @property
    def name(self) -> str:
        for key, flags in VARIANTS.items():
            if flags == self:
                return key
        return "custom"


VARIANTS: Dict[str, AblationFlags] = {
    "full": AblationFlags(),
    "no-seg": AblationFlags(use_seg_branch=False),
    "no-raw": AblationFlags(use_raw_branch=False),
    "no-sga": AblationFlags(use_sga=False),
}

VARIANT_TITLES = {
    "no-seg": "w/o segmented image encoder",
    "no-raw": "w/o raw image encoder",
    "no-sga": "w/o SGA",
    "full": "Full SegImgNet",
}


@dataclass(frozen=True)
class EncoderConfig:
    stem_kernel: int = 2
    depths: Tuple[int, ...] = (1, 1, 2, 1)
    widths: Tuple[int, ...] = (16, 32, 64, 128)
    kernel: int = 7
    expansion: int = 4

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.depths) != len(self.widths) or not self.depths:
            raise ConfigurationError(f"encoder depths {self.depths} and widths {self.widths} must have equal length")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigurationError(f"encoder widths must strictly increase, got {self.widths}")
        if self.stem_kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError("stem_kernel must be >= 1 and the depthwise kernel odd")

    @property
    def stages(self) -> int:
        return len(self.widths)


class ConvNeXtBlock(Module):
    """depthwise 7x7 -> layernorm -> 1x1 expand -> GELU -> 1x1 project, plus residual."""

    def __init__(self, ch: int, rng: np.random.Generator, kernel: int = 7, expansion: int = 4):
        self.dw = Conv2d(ch, ch, kernel, rng, padding=kernel // 2, groups=ch)
        self.norm = LayerNorm(ch)
        self.pw1 = Conv2d(ch, expansion * ch, 1, rng)
        self.pw2 = Conv2d(expansion * ch, ch, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.pw2(ops.gelu(self.pw1(self.norm(self.dw(x)))))


class Downsample(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.norm = LayerNorm(in_ch)
        self.conv = Conv2d(in_ch, out_ch, 2, rng, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(self.norm(x))


class Stage(Module):
    def __init__(self, ch: int, depth: int, rng: np.random.Generator, kernel: int, expansion: int):
        self.blocks = [ConvNeXtBlock(ch, rng, kernel, expansion) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class SGABlock(Module):
    def __init__(self, tap_channels: int, stage_channels: int, rng: np.random.Generator):
        self.conv = Conv2d(tap_channels, stage_channels, 3, rng, padding=1)

    def attention(self, h_seg: Tensor, size: Tuple[int, int]) -> Tensor:
        return ops.sigmoid(self.conv(ops.resize_nearest(h_seg, size)))

    def forward(self, h_local: Tensor, h_seg: Tensor) -> Tensor:
        return sga_gate(h_local, h_seg, self)


def sga_gate(h_local: Tensor, h_seg: Tensor, block: SGABlock) -> Tensor:
    """sigmoid(conv3x3(h_seg resized to h_local's grid)) * h_local."""
    if h_local.ndim != 4 or h_seg.ndim != 4 or h_local.shape[0] != h_seg.shape[0]:
        raise ConfigurationError(f"SGA gate: batch mismatch between {h_local.shape} and {h_seg.shape}")
    if h_seg.shape[1] != block.conv.weight.shape[1]:
        raise ConfigurationError(
            f"SGA gate: tap has {h_seg.shape[1]} channels, conv expects {block.conv.weight.shape[1]}")
    att = block.attention(h_seg, h_local.shape[2:])
    if att.shape != h_local.shape:
        raise ConfigurationError(f"SGA gate: attention {att.shape} does not match feature map {h_local.shape}")
    return att * h_local


class Encoder(Module):
    def __init__(self, in_channels: int, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        w = config.widths
        self.stem = Conv2d(in_channels, w[0], config.stem_kernel, rng, stride=config.stem_kernel)
        self.stem_norm = LayerNorm(w[0])
        self.stages = [Stage(w[i], d, rng, config.kernel, config.expansion) for i, d in enumerate(config.depths)]
        self.downs = [Downsample(w[i], w[i + 1], rng) for i in range(len(w) - 1)]
        self.norm = LayerNorm(w[-1])

    @property
    def embedding_dim(self) -> int:
        return self.config.widths[-1]

    def forward(self, x: Tensor, taps: Optional[Sequence[Tensor]] = None,
                gates: Optional[Sequence[SGABlock]] = None) -> Tuple[Tensor, List[Tensor]]:
        """Returns the N x D embedding and the per-stage (post-gate) feature maps."""
        if taps is not None:
            if gates is None or len(taps) != len(self.stages) or len(gates) != len(self.stages):
                raise ConfigurationError(
                    f"encoder has {len(self.stages)} stages but got {len(taps)} taps"
                    f" and {0 if gates is None else len(gates)} SGA blocks")
        h = self.stem_norm(self.stem(x))
        maps = []
        for i, stage in enumerate(self.stages):
            h = stage(h)
            if taps is not None:
                h = sga_gate(h, taps[i], gates[i])
            maps.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        return self.norm(ops.global_avg_pool(h)), maps


def encoder_forward(encoder: Encoder, x: Tensor, taps=None, gates=None):
    return encoder(x, taps, gates)


class MLPHead(Module):
    def __init__(self, in_features: int, hidden: int, classes: int, rng: np.random.Generator):
        self.fc1 = Dense(in_features, hidden, rng)
        self.fc2 = Dense(hidden, classes, rng)

    def forward(self, h: Tensor) -> Tensor:
        """Class logits."""
        return self.fc2(ops.gelu(self.fc1(h)))


@dataclass(frozen=True)
class ModelConfig:
    unet: UNetConfig = field(default_factory=UNetConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    num_classes: int = 2
    head_hidden: Optional[int] = None   # defaults to the fused embedding width
    binarize_seg: bool = False
    finetune_seg: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"]["depths"] = list(self.encoder.depths)
        d["encoder"]["widths"] = list(self.encoder.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["unet"] = UNetConfig(**d["unet"])
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)


class SegImgNet(Module):
    def __init__(self, config: ModelConfig = ModelConfig(), flags: AblationFlags = AblationFlags(), seed: int = 0):
        if config.encoder.stages != config.unet.levels:
            raise ConfigurationError(
                f"encoder has {config.encoder.stages} stages but the U-Net emits {config.unet.levels} taps")
        if config.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        self.config = config
        self.flags = flags
        # one independent stream per component so ablations share the surviving initial weights
        rngs = [np.random.default_rng([seed, k]) for k in range(5)]
        self.seg = UNet(config.unet, rngs[0])
        d_cls = 0
        if flags.use_seg_branch:
            self.enc_seg = Encoder(config.unet.out_channels, config.encoder, rngs[1])
            d_cls += self.enc_seg.embedding_dim
            if flags.use_sga:
                self.sga = [SGABlock(c, w, rngs[3])
                            for c, w in zip(config.unet.tap_widths(), config.encoder.widths)]
        if flags.use_raw_branch:
            self.enc_raw = Encoder(config.unet.in_channels, config.encoder, rngs[2])
            d_cls += self.enc_raw.embedding_dim
        self.head = MLPHead(d_cls, config.head_hidden or d_cls, config.num_classes, rngs[4])

    @property
    def needs_segmentation(self) -> bool:
        return self.flags.use_seg_branch

    def trainable_parameters(self):
        return [(n, p) for n, p in self.named_parameters()
                if self.config.finetune_seg or not n.startswith("seg.")]

    def segment(self, x: Tensor) -> SegOutput:
        if self.config.finetune_seg:
            return self.seg(x)
        with no_grad():
            return self.seg(x)

    def classifier_input(self, seg_out: SegOutput) -> Tensor:
        if self.config.binarize_seg:
            return Tensor((seg_out.seg_image.data >= 0.5).astype(seg_out.seg_image.dtype))
        return seg_out.seg_image

    def logits(self, x: Tensor, seg_out: Optional[SegOutput], return_maps: bool = False):
        parts = []
        maps: List[Tensor] = []
        if self.flags.use_seg_branch:
            if seg_out is None:
                raise ConfigurationError("the segmented-image branch needs a segmentation output")
            taps = seg_out.taps if self.flags.use_sga else None
            gates = self.sga if self.flags.use_sga else None
            h_local, maps = self.enc_seg(self.classifier_input(seg_out), taps, gates)
            parts.append(h_local)
        if self.flags.use_raw_branch:
            h_global, _ = self.enc_raw(x)
            parts.append(h_global)
        h_cls = parts[0] if len(parts) == 1 else ops.concat(parts, axis=1)
        z = self.head(h_cls)
        return (z, maps) if return_maps else z

    def classify(self, x: Tensor, seg_out: Optional[SegOutput]) -> Tensor:
        """Class probabilities, N x K."""
        return ops.softmax(self.logits(x, seg_out), axis=1)

    def forward(self, x: Tensor) -> Tensor:
        seg_out = self.segment(x) if self.needs_segmentation else None
        return self.classify(x, seg_out)


def classify(x: Tensor, seg_out: Optional[SegOutput], model: SegImgNet) -> Tensor:
    return model.classify(x, seg_out)
