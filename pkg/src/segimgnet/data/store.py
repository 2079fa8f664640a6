"""Dataset directories: ``manifest.csv`` plus one PPM per image and one PGM per mask.

Paths in the manifest are relative to the dataset directory; an empty mask
cell means the sample has no vessel annotation.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import List, Optional, Sequence

from ..errors import DataError
from .imageio import read_mask, read_ppm, write_mask, write_ppm
from .synth import LabeledSample

MANIFEST = "manifest.csv"
GENERATOR = "generator.json"
COLUMNS = ("id", "label", "image", "mask")


def save_dataset(samples: Sequence[LabeledSample], root, generator: Optional[dict] = None) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    if any(s.mask is not None for s in samples):
        (root / "masks").mkdir(exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for s in samples:
        image = f"images/{s.id}.ppm"
        write_ppm(root / image, s.image)
        mask = ""
        if s.mask is not None:
            mask = f"masks/{s.id}.pgm"
            write_mask(root / mask, s.mask)
        writer.writerow((s.id, s.label, image, mask))
    (root / MANIFEST).write_text(buf.getvalue())
    if generator is not None:
        (root / GENERATOR).write_text(json.dumps(generator, sort_keys=True, indent=2) + "\n")
    return root


def load_dataset(root) -> List[LabeledSample]:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise DataError(f"{root}: no {MANIFEST}")
    with manifest.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise DataError(f"{manifest}: header must be {','.join(COLUMNS)}, got {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{manifest}: no samples")
    samples, seen, shape = [], set(), None
    for line, row in enumerate(rows, start=2):
        sid = row["id"]
        if sid in seen:
            raise DataError(f"{manifest}:{line}: duplicate id {sid!r}")
        seen.add(sid)
        try:
            label = int(row["label"])
        except ValueError:
            raise DataError(f"{manifest}:{line}: label {row['label']!r} is not an integer") from None
        if label < 0:
            raise DataError(f"{manifest}:{line}: negative label")
        for key in ("image", "mask"):
            if row[key] and not (root / row[key]).is_file():
                raise DataError(f"{manifest}:{line}: missing file {row[key]}")
        image = read_ppm(root / row["image"], shape)
        shape = image.shape[1:]
        mask = read_mask(root / row["mask"], shape) if row["mask"] else None
        samples.append(LabeledSample(image, mask, label, sid))
    return samples


def load_generator(root) -> Optional[dict]:
    path = Path(root) / GENERATOR
    return json.loads(path.read_text()) if path.is_file() else None
