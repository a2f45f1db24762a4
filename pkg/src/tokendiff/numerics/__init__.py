"""Self-contained differentiable tensor core: float64 arrays, an explicit
tape, and every primitive the denoiser needs (elementwise/affine ops, causal
depthwise convolution, real FFT with gradients, softmax cross-entropy,
reductions, sequence resampling)."""

from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    avg_pool2,
    backward,
    concat,
    gather,
    gelu,
    matmul,
    mean,
    moveaxis,
    mul,
    narrow,
    neg,
    reshape,
    scale,
    sum_,
    tanh,
    upsample_nearest2,
)
from .fft import ComplexSpectrum, fft_raw, ifft_raw, irfft, rfft
from .signal import causal_depthwise_conv
from .loss import softmax_cross_entropy
from .gradcheck import grad_check, grad_check_many

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "avg_pool2",
    "backward",
    "causal_depthwise_conv",
    "concat",
    "ComplexSpectrum",
    "fft_raw",
    "gather",
    "gelu",
    "grad_check",
    "grad_check_many",
    "ifft_raw",
    "irfft",
    "matmul",
    "mean",
    "moveaxis",
    "mul",
    "narrow",
    "neg",
    "reshape",
    "rfft",
    "scale",
    "softmax_cross_entropy",
    "sum_",
    "tanh",
    "upsample_nearest2",
]
