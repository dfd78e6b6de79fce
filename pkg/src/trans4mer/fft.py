"""Radix-2 FFT and FFT-based causal convolution.

``fft_real``/``ifft_real`` are an iterative Cooley-Tukey transform over the
last axis (power-of-two lengths only). ``causal_conv`` is the differentiable
convolution used inside S4 layers; it runs on scipy's pocketfft because it sits
on the training hot path.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .tensor import Tensor, _accum, _make


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft(x: np.ndarray, sign: float) -> np.ndarray:
    n = x.shape[-1]
    _check_pow2(n)
    ctype = np.complex64 if x.dtype in (np.float32, np.complex64) else np.complex128
    lead = x.shape[:-1]
    y = np.asarray(x, dtype=ctype)[..., _bit_reverse(n)]
    m = 1
    while m < n:
        w = np.exp(sign * 1j * np.pi * np.arange(m) / m).astype(ctype)
        y = y.reshape(lead + (n // (2 * m), 2, m))
        even = y[..., 0, :]
        odd = y[..., 1, :] * w
        y = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return y.reshape(lead + (n,))


def fft_real(x) -> np.ndarray:
    """Discrete Fourier transform of a real signal; returns the full complex spectrum."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        raise TypeError("fft_real expects a real signal")
    return _fft(x, -1.0)


def ifft_real(spec) -> np.ndarray:
    """Inverse of :func:`fft_real`; returns the real part of the inverse transform."""
    spec = np.asarray(spec)
    return (_fft(spec, 1.0) / spec.shape[-1]).real


def causal_conv(x: Tensor, k: Tensor) -> Tensor:
    """y[..., t, c] = sum_{s<=t} k[c, s] * x[..., t-s, c].

    ``x`` is ``[..., L, C]`` and ``k`` is ``[C, L]``. Both are zero-padded to a
    power of two >= 2L so the circular product has no wrap-around. The forward
    spectra are kept for the backward pass, where both gradients are
    correlations evaluated in the frequency domain.
    """
    L, C = x.shape[-2], x.shape[-1]
    if k.shape != (C, L):
        raise ValueError(f"kernel shape {k.shape} does not match input [..., {L}, {C}]")
    n = next_pow2(2 * L)
    xf = sfft.rfft(np.swapaxes(x.data, -1, -2), n=n, axis=-1)  # [..., C, F]
    kf = sfft.rfft(k.data, n=n, axis=-1)
    y = sfft.irfft(xf * kf, n=n, axis=-1)[..., :L]

    def bw(g):
        gf = sfft.rfft(np.swapaxes(g, -1, -2), n=n, axis=-1)
        if x.requires_grad:
            gx = sfft.irfft(gf * np.conj(kf), n=n, axis=-1)[..., :L]
            _accum(x, np.swapaxes(gx, -1, -2).astype(x.dtype, copy=False))
        if k.requires_grad:
            cross = (gf * np.conj(xf)).reshape(-1, C, gf.shape[-1]).sum(axis=0)
            _accum(k, sfft.irfft(cross, n=n, axis=-1)[..., :L].astype(k.dtype, copy=False))

    out = np.ascontiguousarray(np.swapaxes(y, -1, -2)).astype(x.dtype, copy=False)
    return _make(out, (x, k), bw)
