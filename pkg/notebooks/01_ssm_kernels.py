# %% [markdown]
# # Diagonal SSM kernels
# A diagonal state-space layer can be run two ways: step the recurrence one
# sample at a time, or materialize its impulse response once and convolve.
# This walks through both on a small random system and checks they agree.

# %%
import numpy as np

from trans4mer.fft import causal_conv
from trans4mer.ssm import discretize, init_ssm, materialize_kernel, scan_recurrence, ssm_kernel
from trans4mer.tensor import Tensor
from trans4mer.verify import kernel_path, random_ssm

rng = np.random.default_rng(0)

# %%
# default init: Re(a) = -1/2, Im(a) = pi * n, step sizes log-uniform in [1e-3, 1e-1]
p = init_ssm(d_model=2, state_size=8, seed=0)
print("Re(a):", p.a_re.data[0])
print("Im(a):", np.round(p.a_im.data[0], 3))
print("dt:   ", np.round(np.exp(p.log_dt.data), 4))

# %%
# zero-order hold, then the length-32 kernel of channel 0
dssm = discretize(p)
print("|a_bar| per mode:", np.round(np.abs(dssm.a_bar[0]), 5))
k = materialize_kernel(dssm, 32)
print("k[0, :8] =", np.round(k[0, :8], 4))

# %%
# a random system with faster decay is more interesting to look at
p = random_ssm(rng, d_model=3, state_size=8)
x = rng.standard_normal((256, 3))
conv = kernel_path(p, x)
scan = scan_recurrence(discretize(p), x)
print("max |conv - scan| =", np.abs(conv - scan).max())

# %%
# the differentiable kernel used in training matches the numpy one
kt = ssm_kernel(p, 64).data
print("max |ssm_kernel - materialize_kernel| =", np.abs(kt - materialize_kernel(discretize(p), 64)).max())

# %%
# FFT convolution cost grows roughly linearly in the sequence length
import time

for L in (512, 1024, 2048, 4096):
    xs = Tensor(rng.standard_normal((L, 16)))
    t0 = time.perf_counter()
    for _ in range(5):
        causal_conv(xs, ssm_kernel(init_ssm(16, 32, seed=1), L))
    print(f"L={L:5d}  {1e3 * (time.perf_counter() - t0) / 5:7.2f} ms")
