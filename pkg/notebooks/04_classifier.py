# %% [markdown]
# # The dual-branch classifier
#
# One encoder reads the raw image, another reads the segmented image.  At
# every stage of the second encoder a gate `sigmoid(conv3x3(tap)) * h` lets
# the matching U-Net tap reweight the features.  The two embeddings are
# concatenated and an MLP head gives class probabilities.

# %%
import numpy as np

from segimgnet.autograd import Tensor
from segimgnet.classifier import VARIANTS, EncoderConfig, ModelConfig, SGABlock, sga_gate
from segimgnet.training import build_model, check_isolation
from segimgnet.unet import UNetConfig

rng = np.random.default_rng(0)
block = SGABlock(tap_channels=4, stage_channels=6, rng=rng)
h = Tensor(rng.standard_normal((1, 6, 8, 8)).astype(np.float32))
tap = Tensor(rng.standard_normal((1, 4, 16, 16)).astype(np.float32))
gated = sga_gate(h, tap, block)
print("gate keeps the feature shape", gated.shape, "and never amplifies:",
      bool((abs(gated.data) <= abs(h.data)).all()))

# %% [markdown]
# The ablation switches remove parts of the model.  A disabled input must
# leave the output unchanged bit for bit, which `check_isolation` probes.

# %%
config = ModelConfig(unet=UNetConfig(base_width=8), encoder=EncoderConfig(widths=(8, 16, 32, 48)))
x = rng.random((2, 3, 64, 64)).astype(np.float32)
for name, flags in VARIANTS.items():
    model = build_model(config, flags, seed=0)
    check_isolation(model, x)
    n_params = sum(p.data.size for _, p in model.trainable_parameters())
    print(f"{name:7s} trainable parameters {n_params:7d}  p(diseased) {model(Tensor(x)).data[:, 1].round(4)}")
