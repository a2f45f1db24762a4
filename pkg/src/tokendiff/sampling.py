"""Reverse-process generation: start from fully noised tokens (or a prompt
with a noised region) and iteratively denoise t = T-1 .. 0.

Each reverse step samples every position independently from the softmax of
the model's logits at temperature tau; tau = 0 takes the argmax with
lowest-index tie-break.  Per-step randomness comes from counter-based
streams keyed by (seed, t), so the loop can be replayed from any
intermediate state of the trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .text import TokenSequence


@dataclass
class SampleRequest:
    length: int
    steps: int | None = None        # None: use the model's diffusion step count
    temperature: float = 1.0
    seed: int = 0
    mode: str = "generate"          # "generate" | "inpaint"
    prompt: np.ndarray | None = None
    freeze_mask: np.ndarray | None = None
    keep_trace: bool = True

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.mode not in ("generate", "inpaint"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "inpaint":
            if self.prompt is None or self.freeze_mask is None:
                raise ValueError("inpaint mode requires prompt and freeze_mask")
            self.prompt = np.asarray(self.prompt, dtype=np.int64)
            self.freeze_mask = np.asarray(self.freeze_mask, dtype=bool)
            if self.prompt.shape != (self.length,):
                raise ValueError(
                    f"prompt length {self.prompt.shape} != ({self.length},)")
            if self.freeze_mask.shape != (self.length,):
                raise ValueError(
                    f"freeze_mask length {self.freeze_mask.shape} != ({self.length},)")


@dataclass
class SampleResult:
    tokens: TokenSequence
    trace: list[np.ndarray]  # [x^T, ..., x^0]; only [x^0] if keep_trace is off


def _logits_of(model, x: np.ndarray, t: int) -> np.ndarray:
    out = model.forward(x[None, :], t)
    return np.asarray(getattr(out, "data", out))[0]


def denoise_once(model, x, t: int, temperature: float,
                 rng: np.random.Generator) -> np.ndarray:
    """One reverse step: sample x^t per position from the model given x^{t+1}."""
    steps = model.config.diffusion_steps
    if not 0 <= t < steps:
        raise ValueError(f"t must lie in [0, {steps}), got {t}")
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    ids = x.ids if isinstance(x, TokenSequence) else np.asarray(x, dtype=np.int64)
    logits = _logits_of(model, ids, t)
    if temperature == 0.0:
        return logits.argmax(axis=-1).astype(np.int64)
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    u = rng.random((ids.shape[0], 1))
    idx = (np.cumsum(p, axis=-1) < u).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1).astype(np.int64)


def _check_steps(model, req: SampleRequest) -> int:
    steps = model.config.diffusion_steps
    if req.steps is not None and req.steps != steps:
        raise ValueError(f"request asks for {req.steps} steps, model has {steps}")
    if req.length != model.config.seq_len:
        raise ValueError(
            f"request length {req.length} != model sequence length {model.config.seq_len}")
    return steps


def generate(model, req: SampleRequest) -> SampleResult:
    """Ancestral generation from fully noised tokens; returns x^0 and the trace."""
    steps = _check_steps(model, req)
    v = model.config.vocab_size
    x = rng_mod.stream(req.seed, rng_mod.SAMPLE_INIT).integers(
        0, v, size=req.length, dtype=np.int64)
    trace = [x.copy()]
    for t in range(steps - 1, -1, -1):
        x = denoise_once(model, x, t, req.temperature,
                         rng_mod.stream(req.seed, rng_mod.SAMPLE_STEP, t))
        if req.keep_trace:
            trace.append(x.copy())
    if not req.keep_trace:
        trace = [x.copy()]
    return SampleResult(tokens=TokenSequence(ids=x), trace=trace)


def inpaint(model, req: SampleRequest) -> SampleResult:
    """Reverse diffusion with positions pinned to the prompt where the
    freeze mask is set; unfrozen positions start as uniform noise."""
    if req.mode != "inpaint":
        raise ValueError("inpaint() requires a request with mode='inpaint'")
    steps = _check_steps(model, req)
    v = model.config.vocab_size
    frozen = req.freeze_mask
    x = rng_mod.stream(req.seed, rng_mod.SAMPLE_INIT).integers(
        0, v, size=req.length, dtype=np.int64)
    x[frozen] = req.prompt[frozen]
    trace = [x.copy()]
    for t in range(steps - 1, -1, -1):
        x = denoise_once(model, x, t, req.temperature,
                         rng_mod.stream(req.seed, rng_mod.SAMPLE_STEP, t))
        x[frozen] = req.prompt[frozen]  # overwrite after every reverse step
        if req.keep_trace:
            trace.append(x.copy())
    if not req.keep_trace:
        trace = [x.copy()]
    return SampleResult(tokens=TokenSequence(ids=x), trace=trace)
