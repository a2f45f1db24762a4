"""Forward corruption process for token sequences.

Each step applies, independently per position, the kernel

    q(next | cur) = beta * uniform(V) + (1 - beta) * delta(next == cur)

i.e. with probability beta the token is replaced by a uniform draw over the
whole vocabulary (which may resample its own value), else kept.  Two such
kernels compose into a kernel of the same family, so the t-step marginal has
the closed form a_t * delta + (1 - a_t) * uniform with a_t = prod(1 - beta_u);
`forward_to_step` jumps straight to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .text import TokenSequence

MAX_STEPS = 64


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step replacement probabilities and their survival products.

    survival[t-1] = prod_{u < t} (1 - beta_u), the probability a position is
    never replaced through t steps.
    """

    betas: tuple[float, ...]
    survival: tuple[float, ...]

    def __post_init__(self):
        t = len(self.betas)
        if not 1 <= t <= MAX_STEPS:
            raise ValueError(f"schedule needs 1..{MAX_STEPS} steps, got {t}")
        if any(b < 0.0 or b > 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1]: {self.betas}")
        if any(b2 < b1 for b1, b2 in zip(self.betas, self.betas[1:])):
            raise ValueError("betas must be nondecreasing")
        expect = []
        acc = 1.0
        for b in self.betas:
            acc *= 1.0 - b
            expect.append(acc)
        if len(self.survival) != t or any(abs(a - b) > 1e-12 for a, b in zip(self.survival, expect)):
            raise ValueError("survival does not match cumulative products of (1 - beta)")

    @property
    def steps(self) -> int:
        return len(self.betas)


def schedule_from_betas(betas) -> NoiseSchedule:
    """NoiseSchedule with survival products computed from the given betas."""
    betas = tuple(float(b) for b in betas)
    survival = []
    acc = 1.0
    for b in betas:
        acc *= 1.0 - b
        survival.append(acc)
    return NoiseSchedule(betas=betas, survival=tuple(survival))


def make_linear_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas from beta_start to beta_end over `steps` steps."""
    if beta_end < beta_start:
        raise ValueError(f"beta_end {beta_end} < beta_start {beta_start}")
    if steps == 1:
        betas = [float(beta_start)]
    else:
        betas = [beta_start + i * (beta_end - beta_start) / (steps - 1) for i in range(steps)]
    return schedule_from_betas(betas)


def _ids(x) -> np.ndarray:
    arr = x.ids if isinstance(x, TokenSequence) else np.asarray(x)
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("token arrays must be integers")
    return arr.astype(np.int64, copy=False)


def forward_step(x, beta: float, rng: np.random.Generator,
                 vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    """One corruption step. Returns (corrupted ids, replacement mask).

    Mask marks positions whose value was drawn from the uniform; a drawn
    value may coincide with the original.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    ids = _ids(x)
    mask = rng.random(ids.shape) < beta
    draws = rng.integers(0, vocab_size, size=ids.shape, dtype=np.int64)
    return np.where(mask, draws, ids), mask


def marginal_survival(s: NoiseSchedule, t: int) -> float:
    """Probability a position is never replaced through t steps (1 <= t <= T)."""
    if not 1 <= t <= s.steps:
        raise ValueError(f"t must lie in [1, {s.steps}], got {t}")
    return s.survival[t - 1]


def forward_to_step(x0, t: int, s: NoiseSchedule, rng: np.random.Generator,
                    vocab_size: int) -> np.ndarray:
    """Jump x^0 -> x^t in one draw from the closed-form t-step marginal."""
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    a = marginal_survival(s, t)
    ids = _ids(x0)
    mask = rng.random(ids.shape) >= a
    draws = rng.integers(0, vocab_size, size=ids.shape, dtype=np.int64)
    return np.where(mask, draws, ids)


@dataclass(eq=False)
class ForwardSample:
    """One supervised example: denoiser input x^{t+1}, target x^t, and the
    mask of positions the final corruption step redrew."""

    t: int
    x_t: np.ndarray       # corruption level t+1: what the network sees
    target: np.ndarray    # corruption level t: what it should predict
    changed_mask: np.ndarray

    def __post_init__(self):
        if self.x_t.shape != self.target.shape or self.x_t.shape != self.changed_mask.shape:
            raise ValueError("x_t, target and changed_mask must share a shape")


def make_training_pair(x0, t: int, s: NoiseSchedule, rng: np.random.Generator,
                       vocab_size: int) -> ForwardSample:
    """Corrupt x^0 to level t (the target), then one more step (the input).

    t is drawn from {0..T-1}; t = 0 means the target is the clean sequence.
    """
    if not 0 <= t < s.steps:
        raise ValueError(f"t must lie in [0, {s.steps}), got {t}")
    ids = _ids(x0)
    target = ids.copy() if t == 0 else forward_to_step(ids, t, s, rng, vocab_size)
    x_t, mask = forward_step(target, s.betas[t], rng, vocab_size)
    return ForwardSample(t=t, x_t=x_t, target=target, changed_mask=mask)


def kernel_matrix(beta: float, vocab_size: int) -> np.ndarray:
    """Explicit V x V single-step transition matrix (test/inspection oracle)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    v = vocab_size
    return beta / v * np.ones((v, v)) + (1.0 - beta) * np.eye(v)
