# %% [markdown]
# # Command-line workflow
#
# The same pipeline from the shell: generate data, pretrain the segmenter,
# train a fold, evaluate it and dump feature maps.  A small config keeps it
# fast; drop the overrides for the default model.

# %%
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp())
(work / "small.ini").write_text("""\
[model]
base_width = 8
widths = 8, 16, 32, 48
[train]
name = demo
runs = runs
batch = 16
max_epochs = 2
patience = 2
augment = flips
seg_epochs = 2
""")


def segimgnet(*args):
    out = subprocess.run([sys.executable, "-m", "segimgnet", *args], cwd=work, capture_output=True, text=True)
    print("$ segimgnet", " ".join(args), f"-> exit {out.returncode}")
    print(out.stdout + out.stderr)
    return out.returncode


segimgnet("gen-data", "--seed", "0", "--out", "data", "--n-healthy", "48", "--n-diseased", "16")
segimgnet("pretrain-seg", "--data", "data", "--config", "small.ini", "--out", "seg.sgnt")
segimgnet("train", "--data", "data", "--seg-checkpoint", "seg.sgnt", "--config", "small.ini", "--fold", "0")

# %%
segimgnet("evaluate", "--checkpoint", "runs/demo/fold0/best.sgnt", "--data", "data", "--split", "test")
segimgnet("evaluate", "--checkpoint", "runs/demo/fold0/best.sgnt", "--data", "data", "--flags", "no-sga")

# %% [markdown]
# Four channels of the second encoder stage: 16 x 16 maps at 64 x 64 input.

# %%
segimgnet("dump-features", "--checkpoint", "runs/demo/fold0/best.sgnt", "--data", "data",
          "--sample", "c1-00000", "--out", "maps")
print((work / "maps" / "channels.csv").read_text())
segimgnet("dump-features", "--checkpoint", "runs/demo/fold0/best.sgnt", "--data", "data",
          "--sample", "c1-00000", "--stage", "5", "--out", "maps")
