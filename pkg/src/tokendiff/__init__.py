"""Discrete token-replacement diffusion for text: forward corruption with a
closed-form marginal, an SSM + Fourier-MLP U-Net denoiser on a self-contained
float64 autodiff core, denoising training, and an iterative sampler with
inpainting."""

from .diffusion import (
    ForwardSample,
    NoiseSchedule,
    forward_step,
    forward_to_step,
    make_linear_schedule,
    make_training_pair,
    marginal_survival,
)
from .model import Model, ModelConfig, block, fourier_mlp_layer, ssm_kernel, ssm_layer
from .sampling import SampleRequest, SampleResult, denoise_once, generate, inpaint
from .text import TokenSequence, Vocab, bpe_train, build_char_vocab, decode, encode, ingest_corpus
from .training import (
    AdamW,
    Checkpoint,
    TrainConfig,
    Trainer,
    evaluate,
    load_checkpoint,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)

__version__ = "0.1.0"
