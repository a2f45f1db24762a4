"""Named finite-difference cases for every differentiable op plus an
end-to-end tiny model.  `tokendiff grad-check` runs them all and the test
suite reuses the same list."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import Model, ModelConfig
from .numerics import (
    ComplexSpectrum,
    Tensor,
    add,
    avg_pool2,
    causal_depthwise_conv,
    concat,
    gather,
    gelu,
    grad_check_many,
    irfft,
    matmul,
    mean,
    moveaxis,
    mul,
    narrow,
    reshape,
    rfft,
    scale,
    softmax_cross_entropy,
    sum_,
    tanh,
    upsample_nearest2,
)

TOLERANCE = 1e-4


@dataclass
class GradCase:
    name: str
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]
    eps: float = 1e-5


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    passed: bool
    seconds: float


def _rand(g, *shape) -> Tensor:
    return Tensor(g.uniform(-1.0, 1.0, shape), requires_grad=True)


def _case_add(g):
    x, y = _rand(g, 3, 4), _rand(g, 3, 4)
    return lambda: sum_(mul(add(x, y), add(x, y))), [x, y]


def _case_mul(g):
    x, y = _rand(g, 2, 5), _rand(g, 5)  # broadcast path included
    return lambda: sum_(mul(x, y)), [x, y]


def _case_scale(g):
    x = _rand(g, 6)
    return lambda: sum_(mul(scale(x, 1.7), x)), [x]


def _case_matmul(g):
    x, w = _rand(g, 2, 3, 4), _rand(g, 4, 5)
    return lambda: sum_(mul(matmul(x, w), matmul(x, w))), [x, w]


def _case_tanh(g):
    x = _rand(g, 7)
    return lambda: sum_(mul(tanh(x), x)), [x]


def _case_gelu(g):
    x = _rand(g, 7)
    return lambda: sum_(mul(gelu(x), x)), [x]


def _case_gather(g):
    table = _rand(g, 5, 3)
    ids = np.array([[0, 2, 2], [4, 1, 0]])
    return lambda: sum_(mul(gather(table, ids), gather(table, ids))), [table]


def _case_reductions(g):
    x = _rand(g, 3, 4)
    def f():
        row = sum_(mul(x, x), axis=1)
        return add(sum_(row), scale(mean(x), 2.0))
    return f, [x]


def _case_shapes(g):
    x = _rand(g, 2, 3, 4)
    def f():
        y = moveaxis(x, 1, 2)
        y = reshape(y, (2, 12))
        a = narrow(y, 1, 0, 5)
        b = narrow(y, 1, 5, 7)
        return sum_(mul(concat([a, b], axis=1), y))
    return f, [x]


def _case_pool(g):
    x = _rand(g, 2, 3, 8)
    return lambda: sum_(mul(avg_pool2(x), avg_pool2(x))), [x]


def _case_upsample(g):
    x = _rand(g, 2, 3, 4)
    return lambda: sum_(mul(upsample_nearest2(x), upsample_nearest2(x))), [x]


def _case_conv(g):
    x, k = _rand(g, 2, 3, 10), _rand(g, 3, 4)
    def f():
        y = causal_depthwise_conv(x, k)
        return sum_(mul(y, y))
    return f, [x, k]


def _case_rfft(g):
    x = _rand(g, 2, 2, 8)
    def f():
        s = rfft(x)
        return add(sum_(mul(s.real, s.real)), sum_(mul(s.imag, s.imag)))
    return f, [x]


def _case_irfft(g):
    re = _rand(g, 2, 2, 5)
    im = _rand(g, 2, 2, 5)
    def f():
        y = irfft(ComplexSpectrum(real=re, imag=im, original_length=8), 8)
        return sum_(mul(y, y))
    return f, [re, im]


def _case_fft_roundtrip(g):
    x = _rand(g, 1, 2, 8)
    def f():
        y = irfft(rfft(x), 8)
        return sum_(mul(y, y))
    return f, [x]


def _case_fourier_chain(g):
    # rfft -> MLP over concatenated bins -> irfft
    x = _rand(g, 1, 2, 8)
    w1, b1 = _rand(g, 10, 6), _rand(g, 6)
    w2, b2 = _rand(g, 6, 10), _rand(g, 10)
    def f():
        s = rfft(x)
        v = concat([s.real, s.imag], axis=-1)
        h = gelu(add(matmul(v, w1), b1))
        o = add(matmul(h, w2), b2)
        y = irfft(ComplexSpectrum(real=narrow(o, -1, 0, 5),
                                  imag=narrow(o, -1, 5, 5),
                                  original_length=8), 8)
        return sum_(mul(y, y))
    return f, [x, w1, b1, w2, b2]


def _case_cross_entropy(g):
    logits = _rand(g, 2, 3, 5)
    targets = np.array([[0, 4, 2], [1, 1, 3]])
    return lambda: softmax_cross_entropy(logits, targets), [logits]


def _case_tiny_model(g):
    cfg = ModelConfig(vocab_size=5, seq_len=8, embed_dim=4, unet_levels=1,
                      blocks_per_level=1, ssm_state_dim=2, ssm_kernel_len=2,
                      fourier_hidden=6, diffusion_steps=2)
    model = Model(cfg, seed=7)
    params = model.parameters()
    for p in params.values():  # randomize the zero-initialized tensors too
        p.data = g.uniform(-0.5, 0.5, p.shape)
    tokens = g.integers(0, 5, size=(2, 8))
    targets = g.integers(0, 5, size=(2, 8))
    ts = np.array([0, 1])
    def f():
        return softmax_cross_entropy(model.forward(tokens, ts), targets)
    return f, list(params.values())


def default_cases() -> list[GradCase]:
    return [
        GradCase("add", _case_add),
        GradCase("mul", _case_mul),
        GradCase("scale", _case_scale),
        GradCase("matmul", _case_matmul),
        GradCase("tanh", _case_tanh),
        GradCase("gelu", _case_gelu),
        GradCase("gather", _case_gather),
        GradCase("sum_mean", _case_reductions),
        GradCase("reshape_moveaxis_concat_narrow", _case_shapes),
        GradCase("avg_pool2", _case_pool),
        GradCase("upsample_nearest2", _case_upsample),
        GradCase("causal_depthwise_conv", _case_conv),
        GradCase("rfft", _case_rfft),
        GradCase("irfft", _case_irfft),
        GradCase("fft_roundtrip", _case_fft_roundtrip),
        GradCase("fourier_mlp_chain", _case_fourier_chain),
        GradCase("softmax_cross_entropy", _case_cross_entropy),
        GradCase("unet_end_to_end", _case_tiny_model),
    ]


def run_case(case: GradCase, seed: int = 0) -> CaseResult:
    g = np.random.default_rng(seed)
    f, tensors = case.build(g)
    t0 = time.perf_counter()
    err = grad_check_many(f, tensors, eps=case.eps)
    dt = time.perf_counter() - t0
    return CaseResult(name=case.name, max_rel_error=err,
                      passed=err < TOLERANCE, seconds=dt)


def run_suite(cases: list[GradCase] | None = None, seed: int = 0) -> list[CaseResult]:
    return [run_case(c, seed=seed) for c in (cases or default_cases())]
