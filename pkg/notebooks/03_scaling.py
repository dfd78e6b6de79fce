# %% [markdown]
# # Cost against window size
# Gated S4 mixing across shots against full attention over every token of the
# window. Pair counts are exact; wall time and allocator peaks are measured.

# %%
import numpy as np

from trans4mer import tensor as T
from trans4mer.bench import run_bench, scaling_exponent, to_csv
from trans4mer.model import ModelConfig, count_tokens

# %%
_, tokens, pairs = count_tokens(ModelConfig(n_shots=25, k_frames=3, height=224, width=224, patch=32))
print(f"25 shots of 3 frames at 224px, 32px patches: {tokens} tokens, {pairs:,} pairs")

# %%
T.set_default_dtype(np.float32)
points = run_bench([ModelConfig(), ModelConfig(inter_variant="FullAttention")], (9, 17, 25, 33), repeats=3)
print(to_csv(points))

# %%
for v in ("GS4", "FullAttention"):
    print(f"{v:14s} time exponent {scaling_exponent(points, v):.2f}")
peak = {(p.variant, p.n_shots): p.peak_alloc_bytes for p in points}
print("peak bytes at 33 shots, GS4 / FullAttention:", round(peak["GS4", 33] / peak["FullAttention", 33], 2))
