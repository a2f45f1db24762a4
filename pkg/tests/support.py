"""Shared helpers for the test suite."""

import numpy as np

from tokendiff.model import FourierMlpParams, Model, ModelConfig
from tokendiff.numerics import Tensor


def linear_fourier_params(matrix: np.ndarray) -> FourierMlpParams:
    """FourierMlpParams realizing the exact linear map v -> matrix @ v.

    Uses the odd symmetry of the (tanh-form) GELU, gelu(x) - gelu(-x) == x,
    with hidden width 4F: f(v) = P.T-path(gelu(v)) - P.T-path(gelu(-v)).
    """
    two_f = matrix.shape[0]
    if matrix.shape != (two_f, two_f):
        raise ValueError("matrix must be square over the 2F concatenated bins")
    eye = np.eye(two_f)
    w1 = np.concatenate([eye, -eye], axis=1)            # [2F, 4F]
    w2 = np.concatenate([matrix.T, -matrix.T], axis=0)  # [4F, 2F]
    return FourierMlpParams(
        w1=Tensor(w1, requires_grad=True),
        b1=Tensor(np.zeros(2 * two_f), requires_grad=True),
        w2=Tensor(w2, requires_grad=True),
        b2=Tensor(np.zeros(two_f), requires_grad=True),
    )


def identity_fourier_params(n: int) -> FourierMlpParams:
    return linear_fourier_params(np.eye(2 * (n // 2 + 1)))


def tiny_config(**overrides) -> ModelConfig:
    base = dict(vocab_size=5, seq_len=8, embed_dim=4, unet_levels=1,
                blocks_per_level=1, ssm_state_dim=2, ssm_kernel_len=2,
                fourier_hidden=6, diffusion_steps=2)
    base.update(overrides)
    return ModelConfig(**base)


def randomized_model(cfg: ModelConfig, seed: int = 0, scale: float = 0.3) -> Model:
    """Model with every parameter (including the zero-init ones) randomized."""
    model = Model(cfg, seed=seed)
    g = np.random.default_rng(seed + 1)
    for p in model.parameters().values():
        p.data = g.uniform(-scale, scale, p.shape)
    return model
