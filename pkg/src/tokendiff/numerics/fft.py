"""Real FFT / inverse FFT along the last axis, with gradients.

Convention: unnormalized forward X_k = sum_n x_n exp(-2*pi*i*k*n/N), inverse
carries the 1/N factor.  Power-of-two lengths go through an iterative
radix-2 transform vectorized over leading axes, with real/Hermitian
transforms packed into one half-length complex FFT; every other length
falls back to a direct O(N^2) DFT (exercised by tests only -- model configs
restrict sequence lengths to powers of two).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _apply, narrow


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _dft_direct(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    k = np.arange(n)
    m = np.exp(-2j * np.pi * np.outer(k, k) / n)  # symmetric, M[k, j] = M[j, k]
    return a @ m


_BITREV: dict[int, np.ndarray] = {}
_TWIDDLE: dict[int, np.ndarray] = {}
_HALFW: dict[int, np.ndarray] = {}


def _bitrev(n: int) -> np.ndarray:
    rev = _BITREV.get(n)
    if rev is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.intp)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = rev
    return rev


def _twiddle(size: int) -> np.ndarray:
    tw = _TWIDDLE.get(size)
    if tw is None:
        tw = np.exp(-2j * np.pi * np.arange(size // 2) / size)
        _TWIDDLE[size] = tw
    return tw


def _halfw(n: int) -> np.ndarray:
    """exp(-2*pi*i*k/n) for k = 0..n/2-1 (split-transform twiddles)."""
    w = _HALFW.get(n)
    if w is None:
        w = np.exp(-2j * np.pi * np.arange(n // 2) / n)
        _HALFW[n] = w
    return w


def _fft_pow2(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    out = a[..., _bitrev(n)]  # fresh contiguous buffer; butterflies mutate it
    lead = out.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddle(size)
        v = out.reshape(*lead, n // size, size)
        even = v[..., :half]
        odd = v[..., half:]
        t = odd * tw
        np.subtract(even, t, out=odd)
        np.add(even, t, out=even)
        size *= 2
    return out


def fft_raw(a: np.ndarray) -> np.ndarray:
    """Unnormalized complex DFT of `a` along the last axis."""
    a = np.asarray(a, dtype=np.complex128)
    return _fft_pow2(a) if _is_pow2(a.shape[-1]) else _dft_direct(a)


def ifft_raw(a: np.ndarray) -> np.ndarray:
    """Inverse DFT with 1/N normalization."""
    a = np.asarray(a, dtype=np.complex128)
    return np.conj(fft_raw(np.conj(a))) / a.shape[-1]


def _hermitian_full(half: np.ndarray, n: int) -> np.ndarray:
    """Extend a half spectrum to length n; imag of DC/Nyquist is dropped."""
    full = np.zeros(half.shape[:-1] + (n,), dtype=np.complex128)
    bins = n // 2 + 1
    full[..., :bins] = half
    full[..., 0] = half[..., 0].real
    if n % 2 == 0:
        full[..., bins - 1] = half[..., bins - 1].real
    if n > 1:
        hi = (n - 1) // 2
        full[..., -1:-hi - 1:-1] = np.conj(full[..., 1:hi + 1])
    return full


def rfft_herm_raw(x: np.ndarray) -> np.ndarray:
    """Forward transform of real input; returns bins 0..N//2 (complex).

    Even power-of-two lengths use one half-length complex FFT.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n % 2 != 0 or not _is_pow2(n):
        return fft_raw(x)[..., : n // 2 + 1]
    h = n // 2
    z = x[..., 0::2] + 1j * x[..., 1::2]
    zf = _fft_pow2(z)
    zc = np.conj(zf[..., (-np.arange(h)) % h])
    e = 0.5 * (zf + zc)
    o = -0.5j * (zf - zc)
    xk = e + _halfw(n) * o
    nyq = e[..., :1] - o[..., :1]
    return np.concatenate([xk, nyq], axis=-1)


def irfft_herm_raw(half: np.ndarray, n: int) -> np.ndarray:
    """Real inverse of a half spectrum (Hermitian extension implied).

    The imaginary parts of the DC and (even n) Nyquist bins never reach the
    real output and are ignored.  Even power-of-two lengths use one
    half-length complex inverse FFT.
    """
    half = np.asarray(half, dtype=np.complex128)
    if n % 2 != 0 or not _is_pow2(n):
        return np.real(ifft_raw(_hermitian_full(half, n)))
    h = n // 2
    s = half.copy()
    s[..., 0] = s[..., 0].real
    s[..., -1] = s[..., -1].real
    xk = s[..., :h]
    xc = np.conj(s[..., h - np.arange(h)])
    e = 0.5 * (xk + xc)
    o = 0.5 * (xk - xc) * np.conj(_halfw(n))
    z = ifft_raw(e + 1j * o)
    out = np.empty(half.shape[:-1] + (n,), dtype=np.float64)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


@dataclass
class ComplexSpectrum:
    """Half spectrum of a real signal: bins 0..N//2 as separate real/imag tensors.

    For spectra produced by `rfft` the imaginary part is exactly zero at the
    DC bin and, for even N, at the Nyquist bin.
    """

    real: Tensor
    imag: Tensor
    original_length: int

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real/imag shape mismatch: {self.real.shape} vs {self.imag.shape}")
        if self.real.shape[-1] != self.original_length // 2 + 1:
            raise ValueError(
                f"{self.real.shape[-1]} bins inconsistent with length {self.original_length}")

    @property
    def bins(self) -> int:
        return self.real.shape[-1]


def _interior_weights(bins: int, n: int) -> np.ndarray:
    w = np.full(bins, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def rfft(x: Tensor) -> ComplexSpectrum:
    """Forward real FFT along the last axis. Differentiable.

    Rejects sequences shorter than 2 and non-finite input values.
    """
    n = x.data.shape[-1]
    if n < 2:
        raise ValueError(f"rfft needs length >= 2, got {n}")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("rfft input contains non-finite values")
    bins = n // 2 + 1
    spec = rfft_herm_raw(x.data)
    packed = np.concatenate([spec.real, spec.imag], axis=-1)
    packed[..., bins] = 0.0  # imag of DC bin: exactly zero for real input
    if n % 2 == 0:
        packed[..., -1] = 0.0  # imag of Nyquist bin

    # One taped op carries [real bins | imag bins]; the real and imag halves
    # are cheap slices of it.  The adjoint is a weighted Hermitian inverse:
    # grad_x[m] = Re(sum_{k<bins} g_k exp(+2*pi*i*k*m/N)), computed as
    # N * irfft of g with interior bins halved.
    v = 1.0 / _interior_weights(bins, n)

    def back(g):
        gc = (g[..., :bins] + 1j * g[..., bins:]) * v
        return (irfft_herm_raw(gc, n) * n,)

    packed_t = _apply((x,), packed, back)
    real_t = narrow(packed_t, -1, 0, bins)
    imag_t = narrow(packed_t, -1, bins, bins)
    return ComplexSpectrum(real=real_t, imag=imag_t, original_length=n)


def irfft(s: ComplexSpectrum, n: int) -> Tensor:
    """Inverse real FFT back to length `n` (includes the 1/N factor). Differentiable."""
    if s.bins != n // 2 + 1:
        raise ValueError(f"irfft: {s.bins} bins inconsistent with target length {n}")
    if s.original_length != n:
        raise ValueError(f"irfft: spectrum was built for length {s.original_length}, not {n}")
    out = irfft_herm_raw(s.real.data + 1j * s.imag.data, n)

    # d out / d re_k and d out / d im_k fold the Hermitian symmetry into a
    # weight of 2 on interior bins; imag grads vanish at DC/Nyquist.
    w = _interior_weights(s.bins, n)
    bins = s.bins

    def back(g):
        gf = rfft_herm_raw(g)
        gre = w * gf.real / n
        gim = w * gf.imag / n
        gim[..., 0] = 0.0
        if n % 2 == 0:
            gim[..., bins - 1] = 0.0
        return (gre, gim)

    return _apply((s.real, s.imag), out, back)
