"""The denoising network: token + time-step embeddings feeding a small U-Net
whose blocks combine a state-space branch (learned causal convolution kernel)
with a complex-spectrum MLP branch (global mixing), plus a vocabulary
projection head.

Block branches and the head start at exactly zero, so a fresh model is the
identity up to the head: logits are all zero and the first cross-entropy on
any batch is exactly ln(vocab_size).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .numerics import (
    ComplexSpectrum,
    Tensor,
    add,
    avg_pool2,
    causal_depthwise_conv,
    concat,
    gather,
    gelu,
    irfft,
    matmul,
    moveaxis,
    mul,
    narrow,
    reshape,
    rfft,
    sum_,
    tanh,
    upsample_nearest2,
)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    seq_len: int = 128
    embed_dim: int = 64
    unet_levels: int = 2
    blocks_per_level: int = 2
    ssm_state_dim: int = 4
    ssm_kernel_len: int | None = 16  # None: full kernel at each level
    fourier_hidden: int = 128
    diffusion_steps: int = 8
    sequential_branches: bool = False  # route the spectrum branch through the SSM output

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not _is_pow2(self.seq_len):
            raise ValueError(f"seq_len must be a power of two, got {self.seq_len}")
        if self.unet_levels < 0:
            raise ValueError("unet_levels must be >= 0")
        deepest = self.seq_len // (2 ** self.unet_levels)
        if self.seq_len % (2 ** self.unet_levels) != 0 or deepest < 2:
            raise ValueError(
                f"seq_len {self.seq_len} too short for {self.unet_levels} levels")
        if self.blocks_per_level < 1:
            raise ValueError("blocks_per_level must be >= 1")
        if self.ssm_state_dim < 1:
            raise ValueError("ssm_state_dim must be >= 1")
        if self.ssm_kernel_len is not None and not 1 <= self.ssm_kernel_len <= deepest:
            raise ValueError(
                f"ssm_kernel_len must lie in [1, {deepest}] (deepest level length)")
        if self.fourier_hidden < 1:
            raise ValueError("fourier_hidden must be >= 1")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be >= 1")

    def level_dim(self, level: int) -> int:
        return self.embed_dim * (2 ** level)

    def level_len(self, level: int) -> int:
        return self.seq_len // (2 ** level)


@dataclass(eq=False)
class SsmLayerParams:
    """Diagonal state-space system, one independent copy per channel.

    `a_decay` holds pre-squash values; the effective per-mode decay is
    tanh(a_decay), so its magnitude stays below 1 and the materialized
    kernel cannot blow up with position.
    """

    a_decay: Tensor  # [D, M]
    b_in: Tensor     # [D, M]
    c_out: Tensor    # [D, M]
    d_skip: Tensor   # [D]


@dataclass(eq=False)
class FourierMlpParams:
    """Two-layer perceptron over the concatenated real/imag spectrum bins,
    shared across batch and channels. Input/output width 2*(N_level//2+1)."""

    w1: Tensor  # [2F, H]
    b1: Tensor  # [H]
    w2: Tensor  # [H, 2F]
    b2: Tensor  # [2F]


@dataclass(eq=False)
class BlockParams:
    ssm: SsmLayerParams
    ssm_proj_w: Tensor      # [D, D], zero at init
    ssm_proj_b: Tensor      # [D], zero at init
    fourier: FourierMlpParams
    fourier_proj_w: Tensor  # [D, D], zero at init
    fourier_proj_b: Tensor  # [D], zero at init


@dataclass(eq=False)
class LevelParams:
    blocks: list[BlockParams]
    resample_w: Tensor  # down: [D, 2D] after pooling; up: [2D, D] after upsampling
    resample_b: Tensor


def ssm_kernel(p: SsmLayerParams, length: int) -> Tensor:
    """Materialize the impulse response k[d, n] = sum_m c*(tanh a)^n*b, with
    d_skip added at n = 0."""
    if length < 1:
        raise ValueError(f"kernel length must be >= 1, got {length}")
    d = p.a_decay.shape[0]
    a = tanh(p.a_decay)              # [D, M], |entries| < 1
    cb = mul(p.c_out, p.b_in)        # [D, M]
    cols = []
    power: Tensor | None = None      # (tanh a)^n, lazily built from n = 1
    for n in range(length):
        term = cb if power is None else mul(cb, power)
        col = reshape(sum_(term, axis=1), (d, 1))
        if n == 0:
            col = add(col, reshape(p.d_skip, (d, 1)))
        cols.append(col)
        if n < length - 1:
            power = a if power is None else mul(power, a)
    return cols[0] if length == 1 else concat(cols, axis=1)


def ssm_layer(x: Tensor, p: SsmLayerParams, kernel_len: int) -> Tensor:
    """Apply the materialized state-space kernel as a causal depthwise conv."""
    return causal_depthwise_conv(x, ssm_kernel(p, kernel_len))


def fourier_mlp_layer(x: Tensor, p: FourierMlpParams) -> Tensor:
    """rfft along positions -> MLP over [real bins | imag bins] -> irfft.

    The perceptron sees one width-2F vector per (batch, channel) and can
    rescale and rotate individual frequency bins, i.e. adjust amplitude and
    phase, before the signal returns to the position domain.
    """
    n = x.shape[-1]
    f = n // 2 + 1
    if p.w1.shape[0] != 2 * f:
        raise ValueError(
            f"layer configured for {p.w1.shape[0] // 2} bins, input has {f} (length {n})")
    spec = rfft(x)
    v = concat([spec.real, spec.imag], axis=-1)          # [B, D, 2F]
    h = gelu(add(matmul(v, p.w1), p.b1))                 # [B, D, H]
    o = add(matmul(h, p.w2), p.b2)                       # [B, D, 2F]
    re = narrow(o, -1, 0, f)
    im = narrow(o, -1, f, f)
    return irfft(ComplexSpectrum(real=re, imag=im, original_length=n), n)


def _linear_channels(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-position linear map over the channel axis of [B, D, N]."""
    y = moveaxis(x, 1, 2)            # [B, N, D]
    y = add(matmul(y, w), b)         # [B, N, D_out]
    return moveaxis(y, 1, 2)


def block(x: Tensor, t_emb: Tensor, p: BlockParams, kernel_len: int,
          sequential: bool = False) -> Tensor:
    """Residual block: x + ssm_branch + fourier_branch.

    The time embedding is broadcast-added to the block input before the
    branches; the residual carries the raw input.  Both branches end in
    zero-initialized projections, so a fresh block is exactly the identity.
    """
    d = x.shape[1]
    if t_emb.ndim == 1:
        temb = reshape(t_emb, (1, d, 1))
    else:
        temb = reshape(t_emb, (t_emb.shape[0], d, 1))
    h = add(x, temb)
    s = _linear_channels(ssm_layer(h, p.ssm, kernel_len), p.ssm_proj_w, p.ssm_proj_b)
    f_in = add(h, s) if sequential else h
    f = _linear_channels(fourier_mlp_layer(f_in, p.fourier),
                         p.fourier_proj_w, p.fourier_proj_b)
    return add(add(x, s), f)


class Model:
    """U-Net denoiser over token sequences.

    forward(tokens [B, N], t) -> logits [B, N, V]; t may be a scalar step or
    one step per sequence.  Parameters live in a flat name -> Tensor registry
    used by the optimizer and the checkpoint format.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self._params: dict[str, Tensor] = {}
        g = rng_mod.stream(seed, rng_mod.INIT_PARAMS)
        cfg = config
        d0, v, t_steps = cfg.embed_dim, cfg.vocab_size, cfg.diffusion_steps

        self.token_emb = self._add("token_emb", g.normal(0.0, d0 ** -0.5, (v, d0)))
        # one time table per resolution (channel width doubles with depth)
        self.time_tables = [
            self._add(f"time_emb.{lvl}", g.normal(0.0, 0.01, (t_steps, cfg.level_dim(lvl))))
            for lvl in range(cfg.unet_levels + 1)
        ]
        self.down = [self._make_level(g, lvl, down=True) for lvl in range(cfg.unet_levels)]
        self.mid = [self._make_block(g, "mid", j, cfg.unet_levels)
                    for j in range(cfg.blocks_per_level)]
        self.up = [self._make_level(g, lvl, down=False) for lvl in range(cfg.unet_levels)]
        self.head_w = self._add("head.w", np.zeros((d0, v)))
        self.head_b = self._add("head.b", np.zeros(v))

    def _add(self, name: str, arr) -> Tensor:
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        return t

    def _make_block(self, g, where: str, j: int, level: int) -> BlockParams:
        cfg = self.config
        d = cfg.level_dim(level)
        m = cfg.ssm_state_dim
        f = cfg.level_len(level) // 2 + 1
        h = cfg.fourier_hidden
        pre = f"{where}.block{j}"
        ssm = SsmLayerParams(
            a_decay=self._add(f"{pre}.ssm.a_decay", g.normal(0.0, 1.0, (d, m))),
            b_in=self._add(f"{pre}.ssm.b_in", g.normal(0.0, m ** -0.5, (d, m))),
            c_out=self._add(f"{pre}.ssm.c_out", g.normal(0.0, m ** -0.5, (d, m))),
            d_skip=self._add(f"{pre}.ssm.d_skip", np.ones(d)),
        )
        fourier = FourierMlpParams(
            w1=self._add(f"{pre}.fourier.w1", g.normal(0.0, (2 * f) ** -0.5, (2 * f, h))),
            b1=self._add(f"{pre}.fourier.b1", np.zeros(h)),
            w2=self._add(f"{pre}.fourier.w2", g.normal(0.0, h ** -0.5, (h, 2 * f))),
            b2=self._add(f"{pre}.fourier.b2", np.zeros(2 * f)),
        )
        return BlockParams(
            ssm=ssm,
            ssm_proj_w=self._add(f"{pre}.ssm_proj.w", np.zeros((d, d))),
            ssm_proj_b=self._add(f"{pre}.ssm_proj.b", np.zeros(d)),
            fourier=fourier,
            fourier_proj_w=self._add(f"{pre}.fourier_proj.w", np.zeros((d, d))),
            fourier_proj_b=self._add(f"{pre}.fourier_proj.b", np.zeros(d)),
        )

    def _make_level(self, g, lvl: int, down: bool) -> LevelParams:
        cfg = self.config
        where = f"{'down' if down else 'up'}{lvl}"
        blocks = [self._make_block(g, where, j, lvl) for j in range(cfg.blocks_per_level)]
        d_fine, d_coarse = cfg.level_dim(lvl), cfg.level_dim(lvl + 1)
        if down:
            w = g.normal(0.0, d_fine ** -0.5, (d_fine, d_coarse))
            b = np.zeros(d_coarse)
        else:
            w = g.normal(0.0, d_coarse ** -0.5, (d_coarse, d_fine))
            b = np.zeros(d_fine)
        return LevelParams(
            blocks=blocks,
            resample_w=self._add(f"{where}.resample.w", w),
            resample_b=self._add(f"{where}.resample.b", b),
        )

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def _kernel_len(self, level: int) -> int:
        k = self.config.ssm_kernel_len
        return self.config.level_len(level) if k is None else k

    def _time_rows(self, level: int, t: np.ndarray) -> Tensor:
        return gather(self.time_tables[level], t)

    def forward(self, tokens, t) -> Tensor:
        cfg = self.config
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[1] != cfg.seq_len:
            raise ValueError(f"tokens must be [B, {cfg.seq_len}], got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
            raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
        bsz = tokens.shape[0]
        t_arr = np.asarray(t)
        if t_arr.ndim == 0:
            t_arr = np.full(bsz, int(t_arr), dtype=np.int64)
        if t_arr.shape != (bsz,):
            raise ValueError(f"t must be a scalar or shape ({bsz},), got {t_arr.shape}")
        if t_arr.min() < 0 or t_arr.max() >= cfg.diffusion_steps:
            raise ValueError(f"diffusion step out of range [0, {cfg.diffusion_steps})")

        x = moveaxis(gather(self.token_emb, tokens), 1, 2)  # [B, D, N]
        seq = cfg.sequential_branches
        skips: list[Tensor] = []
        for lvl, level in enumerate(self.down):
            temb = self._time_rows(lvl, t_arr)
            for blk in level.blocks:
                x = block(x, temb, blk, self._kernel_len(lvl), sequential=seq)
            skips.append(x)
            x = _linear_channels(avg_pool2(x), level.resample_w, level.resample_b)
        temb = self._time_rows(cfg.unet_levels, t_arr)
        for blk in self.mid:
            x = block(x, temb, blk, self._kernel_len(cfg.unet_levels), sequential=seq)
        for lvl in range(cfg.unet_levels - 1, -1, -1):
            level = self.up[lvl]
            x = _linear_channels(upsample_nearest2(x), level.resample_w, level.resample_b)
            x = add(x, skips[lvl])
            temb = self._time_rows(lvl, t_arr)
            for blk in level.blocks:
                x = block(x, temb, blk, self._kernel_len(lvl), sequential=seq)
        feats = moveaxis(x, 1, 2)                            # [B, N, D]
        return add(matmul(feats, self.head_w), self.head_b)  # [B, N, V]


def unet_forward(tokens, t, m: Model) -> Tensor:
    """Free-function alias for Model.forward."""
    return m.forward(tokens, t)
