"""Diagonal state-space layers.

A channel of the continuous system ``h' = A h + B x, y = C h + D x`` with a
diagonal complex ``A`` is discretized with a zero-order hold and unrolled into a
length-L convolution kernel ``k[t] = Re(sum_n C_n A_bar_n^t B_bar_n)``. The
kernel is applied with an FFT causal convolution; :func:`scan_recurrence` is the
slow sequential reference.

Parameters store only half of a conjugate-symmetric spectrum, so the kernel is
``2 * Re(...)`` over the stored modes and is real by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .fft import causal_conv
from .nn import Linear, Module, param
from .tensor import Tensor

A_RE_MAX = -1e-4
LOG_DT_MIN = math.log(1e-6)


class SsmParams(Module):
    """Continuous parameters for ``d_model`` independent channels of ``state_size`` states."""

    def __init__(self, a_re, a_im, b_re, b_im, c_re, c_im, d, log_dt):
        self.a_re = param(a_re)
        self.a_im = param(a_im)
        self.b_re = param(b_re)
        self.b_im = param(b_im)
        self.c_re = param(c_re)
        self.c_im = param(c_im)
        self.d = param(d)
        self.log_dt = param(log_dt)
        self._constrain()

    @property
    def d_model(self) -> int:
        return self.a_re.shape[0]

    @property
    def state_size(self) -> int:
        return 2 * self.a_re.shape[1]

    def _constrain(self) -> None:
        np.minimum(self.a_re.data, A_RE_MAX, out=self.a_re.data)
        # keep dt strictly inside (1e-6, 1)
        np.clip(self.log_dt.data, LOG_DT_MIN + 1e-6, -1e-6, out=self.log_dt.data)

    def complex_arrays(self):
        a = self.a_re.data + 1j * self.a_im.data
        b = self.b_re.data + 1j * self.b_im.data
        c = self.c_re.data + 1j * self.c_im.data
        return a.astype(np.complex128), b.astype(np.complex128), c.astype(np.complex128)


def init_ssm(d_model: int, state_size: int, seed: int | np.random.Generator = 0) -> SsmParams:
    """S4D-Lin initialization: A_n = -1/2 + i*pi*n over the stored half-spectrum."""
    if state_size % 2:
        raise ValueError(f"state size must be even, got {state_size}")
    if d_model < 1:
        raise ValueError("d_model must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    half = state_size // 2
    a_re = np.full((d_model, half), -0.5)
    a_im = np.tile(np.pi * np.arange(half), (d_model, 1))
    b_re = np.ones((d_model, half))
    b_im = np.zeros((d_model, half))
    c = rng.standard_normal((d_model, half, 2)) * math.sqrt(0.5)
    log_dt = rng.uniform(math.log(1e-3), math.log(1e-1), size=d_model)
    return SsmParams(a_re, a_im, b_re, b_im, c[..., 0], c[..., 1], np.zeros(d_model), log_dt)


@dataclass
class DiscreteSsm:
    """Discretized diagonal system; arrays are ``[channels, modes]`` complex."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    d: np.ndarray
    # stored modes are half of a conjugate-symmetric spectrum
    conjugate: bool = True

    @property
    def scale(self) -> float:
        return 2.0 if self.conjugate else 1.0


def _zoh_ratio(dt_a: np.ndarray, a: np.ndarray, dt) -> np.ndarray:
    """(exp(dt*a) - 1) / a, with the a -> 0 limit dt."""
    small = np.abs(a) < 1e-12
    safe_a = np.where(small, 1.0, a)
    return np.where(small, dt * np.ones_like(a), np.expm1(dt_a) / safe_a)


def discretize(p: SsmParams) -> DiscreteSsm:
    a, b, c = p.complex_arrays()
    dt = np.exp(p.log_dt.data.astype(np.float64))[:, None]
    dt_a = dt * a
    a_bar = np.exp(dt_a)
    b_bar = _zoh_ratio(dt_a, a, dt) * b
    return DiscreteSsm(a_bar, b_bar, c.copy(), p.d.data.astype(np.float64).copy())


def materialize_kernel(dssm: DiscreteSsm, length: int) -> np.ndarray:
    """Kernel ``[channels, length]`` via powers of the diagonal entries (O(S*L) per channel)."""
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    a_bar = np.atleast_2d(np.asarray(dssm.a_bar, dtype=np.complex128))
    w = np.atleast_2d(dssm.c_bar * dssm.b_bar).astype(np.complex128)
    powers = a_bar[..., None] ** np.arange(length)
    k = np.einsum("hn,hnl->hl", w, powers)
    if not dssm.conjugate:
        if np.max(np.abs(k.imag), initial=0.0) > 1e-9:
            raise ValueError("kernel has a non-negligible imaginary part; spectrum not conjugate-closed")
        return k.real
    return dssm.scale * k.real


def scan_recurrence(dssm: DiscreteSsm, x) -> np.ndarray:
    """Sequential h_k = A_bar h_{k-1} + B_bar x_k, y_k = Re(C h_k) + D x_k with h_{-1} = 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    a_bar = np.atleast_2d(dssm.a_bar)
    b_bar = np.atleast_2d(dssm.b_bar)
    c_bar = np.atleast_2d(dssm.c_bar)
    d = np.atleast_1d(dssm.d)
    h = np.zeros(a_bar.shape, dtype=np.complex128)
    y = np.empty_like(x)
    for t in range(x.shape[0]):
        h = a_bar * h + b_bar * x[t][:, None]
        y[t] = dssm.scale * (c_bar * h).sum(axis=1).real + d * x[t]
    return y


def convolve_kernel(k, x, d=0.0) -> np.ndarray:
    """Causal convolution ``y[t] = sum_{s<=t} k[s] x[t-s] + d x[t]`` for ``x`` of shape ``[L, C]``."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    k = np.atleast_2d(k)
    if k.shape[-1] != x.shape[0]:
        raise ValueError(f"kernel length {k.shape[-1]} != sequence length {x.shape[0]}")
    with T.no_grad():
        y = causal_conv(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64)).data
    y = y + np.asarray(d, dtype=np.float64) * x
    return y[:, 0] if squeeze else y


def dump_kernel_csv(path, kernel) -> None:
    """Write one kernel channel (or the first of several) as ``t,k`` rows."""
    k = np.atleast_2d(np.asarray(kernel))[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "k"])
        for t, v in enumerate(k):
            w.writerow([t, repr(float(v))])


# -- differentiable kernel -----------------------------------------------------

def ssm_kernel(p: SsmParams, length: int) -> Tensor:
    """Differentiable ``[channels, length]`` kernel from continuous parameters.

    Gradients are propagated through the complex arithmetic by hand: for a
    holomorphic step ``w = f(u)`` and real loss, the gradient packed as
    ``dL/dRe(u) + i dL/dIm(u)`` is ``conj(f'(u)) * grad_w``.
    """
    a, b, c = p.complex_arrays()
    dt = np.exp(p.log_dt.data.astype(np.float64))[:, None]
    dt_a = dt * a
    z = np.exp(dt_a)
    q = np.expm1(dt_a) / a
    w = c * q * b
    t = np.arange(length)
    powers = np.exp(dt_a[..., None] * t)  # [H, n, L]
    k = 2.0 * np.einsum("hn,hnl->hl", w, powers).real
    parents = (p.a_re, p.a_im, p.b_re, p.b_im, p.c_re, p.c_im, p.log_dt)

    def bw(g):
        g = g.astype(np.float64)
        p1 = np.einsum("hnl,hl->hn", powers, g)
        grad_w = 2.0 * np.conj(p1)
        if length > 1:
            p2 = np.einsum("hnl,hl->hn", powers[..., :-1], g[:, 1:] * t[1:])
        else:
            p2 = np.zeros_like(p1)
        grad_z = 2.0 * np.conj(w * p2)
        bbar = q * b
        grad_c = np.conj(bbar) * grad_w
        grad_bbar = np.conj(c) * grad_w
        grad_b = np.conj(q) * grad_bbar
        grad_q = np.conj(b) * grad_bbar
        grad_z = grad_z + np.conj(1.0 / a) * grad_q
        grad_a = np.conj(-(z - 1.0) / (a * a)) * grad_q
        grad_dta = np.conj(z) * grad_z
        grad_a = grad_a + dt * grad_dta
        grad_dt = (np.conj(a) * grad_dta).real.sum(axis=1)
        dtype = p.a_re.dtype
        T._accum(p.a_re, grad_a.real.astype(dtype))
        T._accum(p.a_im, grad_a.imag.astype(dtype))
        T._accum(p.b_re, grad_b.real.astype(dtype))
        T._accum(p.b_im, grad_b.imag.astype(dtype))
        T._accum(p.c_re, grad_c.real.astype(dtype))
        T._accum(p.c_im, grad_c.imag.astype(dtype))
        T._accum(p.log_dt, (grad_dt * dt[:, 0]).astype(dtype))

    return T._make(k.astype(p.a_re.dtype), parents, bw)


class S4(Module):
    """SSM convolution over ``[..., L, C]``: ``y = k * u + D u``.

    With ``bidirectional`` a second kernel runs over the time-reversed input and
    its output is flipped back and added.
    """

    def __init__(self, channels: int, state_size: int, rng: np.random.Generator,
                 bidirectional: bool = False):
        self.ssm = init_ssm(channels, state_size, rng)
        self.ssm_bwd = init_ssm(channels, state_size, rng) if bidirectional else None

    @property
    def bidirectional(self) -> bool:
        return self.ssm_bwd is not None

    def kernel(self, length: int) -> Tensor:
        return ssm_kernel(self.ssm, length)

    def __call__(self, u: Tensor) -> Tensor:
        length = u.shape[-2]
        y = causal_conv(u, ssm_kernel(self.ssm, length)) + u * self.ssm.d
        if self.ssm_bwd is not None:
            ax = u.ndim - 2
            rev = causal_conv(T.flip(u, ax), ssm_kernel(self.ssm_bwd, length))
            y = y + T.flip(rev, ax)
        return y


class GatedS4(Module):
    """Gated S4: u = gelu(W_u x), v = gelu(W_v x), h = S4(u), y = W_y((W_h h) * v).

    ``eq4_literal`` feeds the raw input to W_h instead of the S4 output, which
    leaves the S4 branch unused; it exists only for comparison runs.
    """

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator,
                 bidirectional: bool = False, eq4_literal: bool = False):
        self.w_u = Linear(dim, dim, rng)
        self.w_v = Linear(dim, dim, rng)
        self.s4 = S4(dim, state_size, rng, bidirectional)
        self.w_h = Linear(dim, dim, rng)
        self.w_y = Linear(dim, dim, rng)
        self.eq4_literal = eq4_literal

    def __call__(self, x: Tensor, gate: Tensor | None = None) -> Tensor:
        u = T.gelu(self.w_u(x))
        v = T.gelu(self.w_v(x)) if gate is None else gate
        h = self.s4(u)
        u_hat = self.w_h(x if self.eq4_literal else h)
        return self.w_y(u_hat * v)


class VanillaS4(Module):
    """Ungated S4 arm: y = W_out gelu(S4(x))."""

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator,
                 bidirectional: bool = False, activation: bool = True):
        self.s4 = S4(dim, state_size, rng, bidirectional)
        self.w_out = Linear(dim, dim, rng)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        h = self.s4(x)
        return self.w_out(T.gelu(h) if self.activation else h)


class DiagS4(VanillaS4):
    """DS4 ablation arm. Kernels here are already diagonal, so this shares the S4 path."""
