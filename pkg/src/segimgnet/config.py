"""Run configuration: ``key = value`` lines in [data], [model] and [train] sections.

Every key can be overridden on the command line as ``--section.key value``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from .classifier import AblationFlags, EncoderConfig, ModelConfig
from .errors import ConfigurationError
from .training import Hyperparams, expand_grid
from .unet import PretrainHyper, UNetConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(kind: Callable) -> Callable:
    def parse(text: str):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(kind(t) for t in items)
    parse.__name__ = f"list of {kind.__name__}"
    return parse


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


SCHEMA: Dict[str, Dict[str, Key]] = {
    "data": {
        "seed": Key(int, 0, "synthetic dataset seed"),
        "n_healthy": Key(int, 857, "healthy images to generate"),
        "n_diseased": Key(int, 143, "diseased images to generate"),
        "size": Key(int, 64, "image side in pixels"),
        "folds": Key(int, 5, "cross-validation folds"),
        "fold_seed": Key(int, 0, "seed of the fold assignment"),
    },
    "model": {
        "levels": Key(int, 4, "U-Net levels, one tap per level"),
        "base_width": Key(int, 16, "U-Net channels at level 1, doubling per level"),
        "depths": Key(_list(int), (1, 1, 2, 1), "blocks per encoder stage"),
        "widths": Key(_list(int), (16, 32, 64, 128), "channels per encoder stage"),
        "kernel": Key(int, 7, "depthwise kernel size in encoder blocks"),
        "expansion": Key(int, 4, "pointwise expansion factor in encoder blocks"),
        "binarize_seg": Key(_bool, False, "feed the thresholded segmentation to the classifier"),
        "finetune_seg": Key(_bool, False, "train the segmenter jointly with the classifier"),
        "flags": Key(str, "full", "variant: full, no-seg, no-raw or no-sga"),
    },
    "train": {
        "name": Key(str, "default", "run name; outputs go to <runs>/<name>"),
        "runs": Key(str, "runs", "root directory for run outputs"),
        "lr": Key(float, 5e-4, "Adam learning rate"),
        "batch": Key(int, 32, "batch size"),
        "disease_weight": Key(float, 0.7, "loss weight of the diseased class (healthy gets 1 - w)"),
        "max_epochs": Key(int, 200, "epoch limit"),
        "patience": Key(int, 20, "early-stopping patience in epochs"),
        "seed": Key(int, 0, "seed for weights, shuffling, oversampling and augmentation"),
        "augment": Key(str, "full", "augmentation: full, flips or none"),
        "unsafe_hyper": Key(_bool, False, "allow hyperparameters outside the searched ranges"),
        "seg_epochs": Key(int, 30, "segmentation pretraining epochs"),
        "seg_lr": Key(float, 2e-3, "segmentation pretraining learning rate"),
        "seg_batch": Key(int, 16, "segmentation pretraining batch size"),
        "seg_val_fraction": Key(float, 0.2, "fraction of images held out to pick the best segmenter"),
        "grid_lr": Key(_list(float), (1e-4, 5e-4, 1e-3), "learning rates searched by grid"),
        "grid_batch": Key(_list(int), (32,), "batch sizes searched by grid"),
        "grid_disease_weight": Key(_list(float), (0.5, 0.7, 0.9), "disease weights searched by grid"),
    },
}


class Settings:
    def __init__(self, values: Optional[Dict[str, Dict[str, Any]]] = None):
        self.values = {s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()}
        for section, items in (values or {}).items():
            for k, v in items.items():
                self.set(section, k, v)

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]; expected one of {', '.join(SCHEMA)}")
        if key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown key {key!r} in [{section}]")
        spec = SCHEMA[section][key]
        if isinstance(value, str):
            try:
                value = spec.parse(value)
            except ValueError as e:
                raise ConfigurationError(f"[{section}] {key}: {e}") from None
        self.values[section][key] = value

    def __getitem__(self, item: Tuple[str, str]):
        return self.values[item[0]][item[1]]

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "Settings":
        parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                           delimiters=("=",), interpolation=None, default_section="\x00")
        parser.optionxform = str
        try:
            parser.read_string(text, source)
        except configparser.Error as e:
            raise ConfigurationError(f"{source}: {e}") from None
        out = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                out.set(section, key, value)
        return out

    @classmethod
    def load(cls, path) -> "Settings":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} does not exist")
        return cls.from_text(path.read_text(), str(path))

    def to_text(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for k, spec in keys.items():
                lines.append(f"{k} = {_fmt(self.values[section][k])}  # {spec.help}")
            lines.append("")
        return "\n".join(lines)

    # -- builders ----------------------------------------------------------

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(unet=UNetConfig(levels=m["levels"], base_width=m["base_width"]),
                           encoder=EncoderConfig(depths=m["depths"], widths=m["widths"], kernel=m["kernel"],
                                                 expansion=m["expansion"]),
                           binarize_seg=m["binarize_seg"], finetune_seg=m["finetune_seg"])

    def flags(self) -> AblationFlags:
        return AblationFlags.from_name(self.values["model"]["flags"])

    def hyper(self) -> Hyperparams:
        t = self.values["train"]
        return Hyperparams(lr=t["lr"], batch=t["batch"], disease_weight=t["disease_weight"],
                           max_epochs=t["max_epochs"], patience=t["patience"], seed=t["seed"],
                           augment=t["augment"], unsafe=t["unsafe_hyper"])

    def pretrain_hyper(self) -> PretrainHyper:
        t = self.values["train"]
        return PretrainHyper(epochs=t["seg_epochs"], lr=t["seg_lr"], batch=t["seg_batch"],
                             val_fraction=t["seg_val_fraction"], seed=t["seed"])

    def grid(self) -> List[Hyperparams]:
        t = self.values["train"]
        return expand_grid(self.hyper(), t["grid_lr"], t["grid_batch"], t["grid_disease_weight"])

    def run_root(self) -> Path:
        return Path(self.values["train"]["runs"]) / self.values["train"]["name"]


def add_override_flags(parser) -> None:
    """One ``--section.key`` option per config key."""
    group = parser.add_argument_group("config overrides")
    for section, keys in SCHEMA.items():
        for k, spec in keys.items():
            group.add_argument(f"--{section}.{k}", dest=f"override:{section}.{k}", metavar="VALUE",
                               help=f"{spec.help} (default {_fmt(spec.default)})")


def apply_overrides(settings: Settings, args) -> Settings:
    for name, value in sorted(vars(args).items()):
        if name.startswith("override:") and value is not None:
            section, key = name[len("override:"):].split(".", 1)
            settings.set(section, key, value)
    return settings
