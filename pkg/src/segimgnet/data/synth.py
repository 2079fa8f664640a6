"""Procedural fundus-like images with vessel masks and a two-class label.

Each image is an orange disc with radial shading, a bright optic disc and a
vessel tree grown as a branching random walk from the disc.  Diseased images
get bright yellow lesions clustered around vessel endpoints and more tortuous
vessels; healthy images carry a few fainter spots at random positions, so a
bright spot alone is weak evidence and its position relative to the vessels
matters.  All geometry lives in normalized [-1, 1] coordinates, so the same
seed draws the same scene at any image size.

Every sample has its own RNG stream keyed on (seed, sample id), which makes
generation order-independent: serial and parallel runs agree bit-for-bit.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError

HEALTHY, DISEASED = 0, 1
LESION_CHANNEL = 1  # green: where yellow lesions contrast most with the orange background

_FUNDUS_RGB = np.array([0.78, 0.38, 0.16])
_DISC_RGB = np.array([0.20, 0.34, 0.18])
_LESION_RGB = np.array([0.22, 0.50, 0.12])
_VESSEL_GAIN = np.array([0.62, 0.42, 0.55])  # vessels multiply the background by this


@dataclass
class LabeledSample:
    image: np.ndarray            # C x H x W float32 in [0, 1]
    mask: Optional[np.ndarray]   # H x W uint8 in {0, 1}
    label: int
    id: str

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledSample):
            return NotImplemented
        same_mask = (self.mask is None and other.mask is None) or (
            self.mask is not None and other.mask is not None and np.array_equal(self.mask, other.mask))
        return (self.id == other.id and self.label == other.label and same_mask
                and self.image.dtype == other.image.dtype and np.array_equal(self.image, other.image))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_per_class: Tuple[int, ...] = (857, 143)   # healthy : diseased close to 6 : 1
    image_size: int = 64
    branch_depth: int = 3
    lesion_intensity: float = 0.7
    haze: float = 0.014            # mean green lift of the diffuse diseased-class haze
    lesion_count: Tuple[int, int] = (3, 6)
    distractor_count: Tuple[int, int] = (0, 2)
    distractor_intensity: float = 0.35
    tortuosity: Tuple[float, float] = (0.10, 0.40)   # per-step heading noise, healthy / diseased
    noise: float = 0.012

    def __post_init__(self):
        object.__setattr__(self, "n_per_class", tuple(int(n) for n in self.n_per_class))
        object.__setattr__(self, "lesion_count", tuple(int(n) for n in self.lesion_count))
        object.__setattr__(self, "distractor_count", tuple(int(n) for n in self.distractor_count))
        object.__setattr__(self, "tortuosity", tuple(float(t) for t in self.tortuosity))
        if len(self.n_per_class) != 2 or min(self.n_per_class) < 1:
            raise ConfigurationError(f"n_per_class needs two counts >= 1, got {self.n_per_class}")
        if self.image_size < 8:
            raise ConfigurationError(f"image_size must be >= 8, got {self.image_size}")
        if self.branch_depth < 0:
            raise ConfigurationError("branch_depth must be >= 0")
        if not 0 <= self.lesion_count[0] <= self.lesion_count[1]:
            raise ConfigurationError(f"lesion_count must be an increasing pair, got {self.lesion_count}")
        if not 0 <= self.distractor_count[0] <= self.distractor_count[1]:
            raise ConfigurationError(f"distractor_count must be an increasing pair, got {self.distractor_count}")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    @classmethod
    def with_imbalance(cls, n_samples: int, ratio: float, **kw) -> "SynthConfig":
        """``ratio`` healthy images for every diseased one."""
        n_dis = max(1, int(round(n_samples / (1.0 + ratio))))
        return cls(n_per_class=(n_samples - n_dis, n_dis), **kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def sample_ids(config: SynthConfig) -> List[Tuple[str, int]]:
    return [(f"c{label}-{i:05d}", label) for label, n in enumerate(config.n_per_class) for i in range(n)]


def sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(sample_id.encode())]))


# -- geometry ---------------------------------------------------------------

@dataclass
class _Tree:
    paths: List[List[Tuple[float, float, float]]] = field(default_factory=list)  # (x, y, radius), normalized
    endpoints: List[Tuple[float, float]] = field(default_factory=list)


def _grow(tree: _Tree, rng, x, y, heading, width, depth, turn, fov, n_steps):
    step = 0.03
    drift = rng.normal(0, 0.02)
    path = [(x, y, width / 2)]
    tree.paths.append(path)
    for _ in range(n_steps):
        heading += drift + rng.normal(0, turn)
        nx, ny = x + step * np.cos(heading), y + step * np.sin(heading)
        if nx * nx + ny * ny > (fov - 0.04) ** 2:
            # follow the rim instead of leaving the field of view
            rim = np.arctan2(y, x)
            turn_dir = 1.0 if np.sin(heading - rim) >= 0 else -1.0
            heading = rim + turn_dir * (np.pi / 2 + rng.uniform(0.1, 0.4))
            nx, ny = x + step * np.cos(heading), y + step * np.sin(heading)
            if nx * nx + ny * ny > (fov - 0.02) ** 2:
                break
        x, y = nx, ny
        path.append((x, y, width / 2))
        if depth > 0 and rng.random() < 0.07:
            side = 1 if rng.random() < 0.5 else -1
            _grow(tree, rng, x, y, heading + side * rng.uniform(0.4, 0.9), width * 0.75, depth - 1, turn, fov,
                  int(rng.integers(10, 22)))
            width *= 0.92
    tree.endpoints.append((x, y))


def _vessel_tree(rng, disc, depth, turn, fov) -> _Tree:
    tree = _Tree()
    # four arcades leave the disc: two towards the macula side, one up and one down
    toward = 0.0 if disc[0] < 0 else np.pi
    for base in (toward - 0.6, toward + 0.6, -np.pi / 2, np.pi / 2):
        _grow(tree, rng, disc[0], disc[1], base + rng.normal(0, 0.15), 0.06, depth, turn, fov,
              int(rng.integers(32, 46)))
    return tree


def _rasterize(tree: _Tree, size: int) -> np.ndarray:
    """Soft vessel coverage in [0, 1]; a pixel is vessel when coverage >= 0.5."""
    cover = np.zeros((size, size))
    scale = size / 2.0
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    # resample every polyline at half-pixel spacing so no holes appear at this resolution
    dense = []
    for pts in tree.paths:
        for (x0, y0, r0), (x1, y1, r1) in zip(pts[:-1], pts[1:]):
            n = max(1, int(np.ceil(np.hypot(x1 - x0, y1 - y0) * scale * 2)))
            for t in np.arange(n) / n:
                dense.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0), r0 + t * (r1 - r0)))
        dense.extend(pts[-1:])
    for x, y, r in dense:
        px, py, pr = (x + 1) * scale, (y + 1) * scale, max(r * scale, 0.55)
        lo_x, hi_x = max(int(px - pr - 1), 0), min(int(px + pr + 2), size)
        lo_y, hi_y = max(int(py - pr - 1), 0), min(int(py + pr + 2), size)
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        d = np.hypot(xs[lo_y:hi_y, lo_x:hi_x] - px, ys[lo_y:hi_y, lo_x:hi_x] - py)
        np.maximum(cover[lo_y:hi_y, lo_x:hi_x], np.clip(pr + 0.5 - d, 0.0, 1.0), out=cover[lo_y:hi_y, lo_x:hi_x])
    return cover


def _waves(rng, gx, gy, n, amp, freq):
    """Sum of ``n`` random plane waves: smooth low-frequency texture."""
    out = np.zeros_like(gx)
    for _ in range(n):
        a = rng.uniform(0, np.pi)
        out += rng.uniform(*amp) * np.cos(rng.uniform(*freq) * (gx * np.cos(a) + gy * np.sin(a))
                                          + rng.uniform(0, 2 * np.pi))
    return out


def _blob(gx, gy, x, y, radius):
    return np.exp(-((gx - x) ** 2 + (gy - y) ** 2) / (2 * radius * radius))


def render(config: SynthConfig, sample_id: str, label: int) -> LabeledSample:
    rng = sample_rng(config.seed, sample_id)
    S = config.image_size
    c = (np.arange(S) + 0.5) / S * 2 - 1
    gx, gy = np.meshgrid(c, c)
    r2 = gx * gx + gy * gy
    fov = 0.94

    tint = _FUNDUS_RGB * (1 + rng.normal(0, 0.015, 3))
    shade = 1.0 - 0.38 * r2
    texture = _waves(rng, gx, gy, 4, (0.006, 0.016), (2, 7))
    img = tint[:, None, None] * (shade + texture)[None]

    side = -1 if rng.random() < 0.5 else 1
    disc = (side * rng.uniform(0.38, 0.5), rng.normal(0, 0.06))
    img += _DISC_RGB[:, None, None] * _blob(gx, gy, disc[0], disc[1], 0.075)[None]

    tree = _vessel_tree(rng, disc, config.branch_depth, config.tortuosity[label], fov)
    cover = _rasterize(tree, S)
    img *= 1.0 - cover[None] * (1.0 - _VESSEL_GAIN[:, None, None])

    if label == DISEASED:
        mottle = 1.0 + 2.0 * _waves(rng, gx, gy, 3, (0.08, 0.15), (6, 12))
        lift = config.haze * rng.uniform(0.5, 1.5) / _LESION_RGB[LESION_CHANNEL]
        img += lift * _LESION_RGB[:, None, None] * mottle[None]
        n = int(rng.integers(config.lesion_count[0], config.lesion_count[1] + 1))
        ends = np.asarray(tree.endpoints)
        for k in rng.integers(0, len(ends), n):
            ex, ey = ends[k] + rng.normal(0, 0.06, 2)
            amp = config.lesion_intensity * rng.uniform(0.7, 1.0)
            img += amp * _LESION_RGB[:, None, None] * _blob(gx, gy, ex, ey, rng.uniform(0.025, 0.045))[None]
    n = int(rng.integers(config.distractor_count[0], config.distractor_count[1] + 1))
    for _ in range(n):
        rad, ang = np.sqrt(rng.uniform(0.05, 0.7)), rng.uniform(0, 2 * np.pi)
        amp = config.distractor_intensity * rng.uniform(0.6, 1.0)
        img += amp * _LESION_RGB[:, None, None] * _blob(gx, gy, rad * np.cos(ang), rad * np.sin(ang), 0.03)[None]

    img += rng.normal(0, config.noise, img.shape)
    outside = np.clip((np.sqrt(r2) - fov) * S / 2 + 0.5, 0.0, 1.0)  # one-pixel soft edge
    img = img * (1.0 - outside) + 0.02 * outside
    # stored as 8-bit on disk, so quantize now and keep memory and disk copies identical
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    mask = ((cover >= 0.5) & (outside < 0.5)).astype(np.uint8)
    return LabeledSample(img.astype(np.float32), mask, int(label), sample_id)


def _render_chunk(args):
    config, chunk = args
    return [render(config, sid, label) for sid, label in chunk]


def generate_dataset(config: SynthConfig, workers: int = 1) -> List[LabeledSample]:
    """All samples, class 0 first.  ``workers > 1`` renders in subprocesses with identical results."""
    todo = sample_ids(config)
    workers = max(1, min(int(workers), len(todo)))
    if workers == 1:
        return _render_chunk((config, todo))
    chunks = [todo[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(workers) as pool:
        parts = list(pool.map(_render_chunk, [(config, ch) for ch in chunks]))
    by_id = {s.id: s for part in parts for s in part}
    return [by_id[sid] for sid, _ in todo]


def stack(samples: Sequence[LabeledSample]) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """(images N x C x H x W, labels N, masks N x H x W or None)."""
    images = np.stack([s.image for s in samples]).astype(np.float32)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    masks = None
    if all(s.mask is not None for s in samples):
        masks = np.stack([s.mask for s in samples])
    return images, labels, masks
