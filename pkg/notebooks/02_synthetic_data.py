# %% [markdown]
# # Synthetic fundus data
#
# Healthy and diseased images differ in vessel tortuosity and in bright
# lesions clustered near vessel endpoints.  Every image comes with its vessel
# mask, which is what the segmenter is pretrained on.

# %%
import tempfile
from pathlib import Path

import numpy as np

from segimgnet.data.sampling import make_folds, rose_oversample
from segimgnet.data.store import load_dataset, save_dataset
from segimgnet.data.synth import LESION_CHANNEL, SynthConfig, generate_dataset, stack

config = SynthConfig(seed=0, n_per_class=(60, 10), image_size=64)
samples = generate_dataset(config)
images, labels, masks = stack(samples)
print(images.shape, masks.shape, np.bincount(labels))

# %%
for label in (0, 1):
    sel = labels == label
    print(f"class {label}: vessel fraction {masks[sel].mean():.3f}, "
          f"green 99th percentile {np.percentile(images[sel, LESION_CHANNEL], 99):.3f}")

# %% [markdown]
# Datasets are stored as binary PPM images and PGM masks plus a manifest.

# %%
root = Path(tempfile.mkdtemp()) / "data"
save_dataset(samples, root, config.to_dict())
print(sorted(p.name for p in root.iterdir()))
assert load_dataset(root) == samples

# %% [markdown]
# Five stratified folds: each test fold is a fifth of every class, and the
# rest splits 3:1 into train and validation.  ROSE then balances the
# training split by drawing minority duplicates.

# %%
ids = [s.id for s in samples]
plan = make_folds(ids, labels, k=5, seed=0)
for i, fold in enumerate(plan.folds):
    print(i, len(fold.train), len(fold.val), len(fold.test))

train_idx = np.array([ids.index(t) for t in plan.folds[0].train])
_, balanced = rose_oversample(train_idx, labels[train_idx], np.random.default_rng(0))
print("after ROSE", np.bincount(balanced))
