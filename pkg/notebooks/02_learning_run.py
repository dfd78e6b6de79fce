# %% [markdown]
# # One learning run on synthetic scenes
# Generate a small scene-structured dataset, look at the two model-free
# baselines, then pretrain with pseudo-boundaries and finetune on the labels.
# One seed takes a few minutes on a laptop CPU.

# %%
import numpy as np

from trans4mer import tensor as T
from trans4mer.baselines import nearest_centroid_scores, random_scores
from trans4mer.data import build_dataset
from trans4mer.experiment import smoke_dataset_spec
from trans4mer.losses import pseudo_boundary
from trans4mer.metrics import average_precision
from trans4mer.model import ModelConfig, TranS4mer
from trans4mer.train import FINETUNE_DEFAULTS, PRETRAIN_DEFAULTS, evaluate, finetune, pretrain, shot_features

SEED = 0
spec = smoke_dataset_spec(SEED)
data = build_dataset(spec)
for split, ws in data.items():
    print(f"{split:5s}: {len(ws):3d} windows, {sum(w.center_label for w in ws):2d} boundaries")

# %%
test = data["test"]
labels = [w.center_label for w in test]
print("random AP:          ", round(average_precision(random_scores(len(test), SEED), labels), 3))
print("nearest-centroid AP:", round(average_precision(nearest_centroid_scores(test), labels), 3))

# %%
T.set_default_dtype(np.float32)
model = TranS4mer(ModelConfig(), seed=SEED)
pre = pretrain(data["train"], model, PRETRAIN_DEFAULTS)
print("pretrain loss per epoch:", np.round(pre.epoch_losses, 3))

# %%
# how often does a pseudo-boundary land on a real one?
frames = np.stack([w.frames for w in data["train"]])
splits = [pseudo_boundary(f) for f in shot_features(model, frames)]
hits = []
for w, s in zip(data["train"], splits):
    # the window's own label only covers the centre shot
    if s.i_star == model.cfg.center:
        hits.append(w.center_label)
print(f"{len(hits)} windows split at the centre, {np.mean(hits):.2f} of them on a true boundary")

# %%
fine = finetune(data["train"], model, FINETUNE_DEFAULTS)
print("finetune loss per epoch:", np.round(fine.epoch_losses, 3))
report = evaluate(model, test)
print(report)
