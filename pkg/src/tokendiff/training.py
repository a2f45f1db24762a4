"""Denoising training loop: draw a diffusion step per sequence, corrupt,
predict the less-noised sequence under cross-entropy, update with AdamW.

All randomness is derived from counter-based streams keyed by the global
step, so a run can be checkpointed and resumed bit-for-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .diffusion import NoiseSchedule, make_training_pair
from .model import Model, ModelConfig
from .numerics import Tape, Tensor, backward, softmax_cross_entropy
from .text import TokenSequence, Vocab


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class TrainConfig:
    batch_size: int = 16
    total_steps: int = 2000
    lr: float = 3e-4
    warmup_steps: int = 100
    weight_decay: float = 0.01
    seed: int = 0
    checkpoint_interval: int = 500
    eval_interval: int = 500
    log_interval: int = 10
    clip_norm: float = 1.0
    holdout_fraction: float = 0.1
    per_batch_t: bool = False  # one t for the whole minibatch instead of per sequence

    def __post_init__(self):
        for name in ("batch_size", "total_steps", "lr", "warmup_steps",
                     "checkpoint_interval", "eval_interval", "log_interval", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")


def adamw_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
                 step: int, lr: float, beta1: float, beta2: float,
                 eps: float, weight_decay: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One decoupled-weight-decay Adam update; pure in, new (p, m, v) out.

    `step` is the 1-based count used for bias correction.
    """
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    p = p - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)
    return p, m, v


class AdamW:
    """AdamW over a named parameter dict, with first/second moment buffers."""

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        self.step_count += 1
        eff_lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adamw_update(
                p.data, g, self.m[name], self.v[name], self.step_count,
                eff_lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        s = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * s
    return norm


def _window_matrix(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        mat = windows
    else:
        mat = np.stack([w.ids if isinstance(w, TokenSequence) else np.asarray(w)
                        for w in windows])
    return mat.astype(np.int64, copy=False)


@dataclass
class StepStats:
    step: int
    loss: float
    t_mean: float
    lr: float


class Trainer:
    """Drives train steps; every source of randomness is keyed by the step
    index, so the loss trajectory depends only on (seed, start state)."""

    def __init__(self, model: Model, windows, schedule: NoiseSchedule,
                 cfg: TrainConfig, optimizer: AdamW | None = None):
        if schedule.steps != model.config.diffusion_steps:
            raise ValueError(
                f"schedule has {schedule.steps} steps, model expects "
                f"{model.config.diffusion_steps}")
        self.model = model
        self.windows = _window_matrix(windows)
        if self.windows.shape[0] == 0:
            raise ValueError("no training windows")
        self.schedule = schedule
        self.cfg = cfg
        self.optimizer = optimizer or AdamW(
            model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    def _lr_at(self, step: int) -> float:
        warm = min(1.0, (step + 1) / self.cfg.warmup_steps)
        return self.cfg.lr * warm

    def _make_batch(self, step: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cfg, sched = self.cfg, self.schedule
        v = self.model.config.vocab_size
        g_batch = rng_mod.stream(cfg.seed, rng_mod.TRAIN_BATCH, step)
        idx = g_batch.integers(0, self.windows.shape[0], size=cfg.batch_size)
        x0 = self.windows[idx]
        g_t = rng_mod.stream(cfg.seed, rng_mod.TRAIN_T, step)
        if cfg.per_batch_t:
            ts = np.full(cfg.batch_size, g_t.integers(0, sched.steps), dtype=np.int64)
        else:
            ts = g_t.integers(0, sched.steps, size=cfg.batch_size).astype(np.int64)
        g_noise = rng_mod.stream(cfg.seed, rng_mod.TRAIN_NOISE, step)
        x_in = np.empty_like(x0)
        target = np.empty_like(x0)
        for i in range(cfg.batch_size):
            pair = make_training_pair(x0[i], int(ts[i]), sched, g_noise, v)
            x_in[i] = pair.x_t
            target[i] = pair.target
        return x_in, target, ts

    def train_step(self, step: int) -> StepStats:
        x_in, target, ts = self._make_batch(step)
        with Tape():
            logits = self.model.forward(x_in, ts)
            loss = softmax_cross_entropy(logits, target)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite loss {loss_val} at step {step} "
                    f"(t values {sorted(set(ts.tolist()))})")
            backward(loss)
        params = self.model.parameters()
        clip_global_norm(params, self.cfg.clip_norm)
        lr = self._lr_at(step)
        self.optimizer.step(lr=lr)
        self.optimizer.zero_grad()
        return StepStats(step=step, loss=loss_val, t_mean=float(ts.mean()), lr=lr)


def evaluate(model: Model, heldout, schedule: NoiseSchedule, seed: int,
             batch_size: int = 32) -> dict[int, float]:
    """Mean denoising cross-entropy per diffusion step on a held-out set.

    Corruption uses a fixed stream per (seed, t), so identical seeds give
    identical numbers.  exp() of these values is a "denoising perplexity";
    it is not comparable to an autoregressive language-model perplexity.
    """
    mat = _window_matrix(heldout)
    if mat.shape[0] == 0:
        raise ValueError("empty held-out set")
    v = model.config.vocab_size
    out: dict[int, float] = {}
    for t in range(schedule.steps):
        g = rng_mod.stream(seed, rng_mod.EVAL_NOISE, t)
        pair = make_training_pair(mat, t, schedule, g, v)
        total, count = 0.0, 0
        for lo in range(0, mat.shape[0], batch_size):
            hi = min(lo + batch_size, mat.shape[0])
            logits = model.forward(pair.x_t[lo:hi], t)
            ce = softmax_cross_entropy(logits, pair.target[lo:hi]).item()
            total += ce * (hi - lo)
            count += hi - lo
        out[t] = total / count
    return out


def denoising_perplexity(eval_map: dict[int, float]) -> dict[int, float]:
    """exp of the per-step denoising cross-entropy (artifact-defined metric)."""
    return {t: float(np.exp(ce)) for t, ce in eval_map.items()}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"SFDM"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config: ModelConfig
    vocab: Vocab
    params: dict[str, np.ndarray]
    opt_state: dict
    global_step: int
    betas: tuple[float, ...]


def save_checkpoint(path: str | Path, model: Model, vocab: Vocab,
                    schedule: NoiseSchedule, optimizer: AdamW,
                    global_step: int) -> None:
    """Binary checkpoint: magic, version, JSON header, float64 LE blobs.

    Parameter blobs follow the header in header order as (value, m, v)
    triples.  Serialization is deterministic: save -> load -> save is
    byte-identical.
    """
    params = model.parameters()
    names = sorted(params)
    header = {
        "config": {k: getattr(model.config, k) for k in (
            "vocab_size", "seq_len", "embed_dim", "unet_levels", "blocks_per_level",
            "ssm_state_dim", "ssm_kernel_len", "fourier_hidden", "diffusion_steps",
            "sequential_branches")},
        "vocab": vocab.to_dict(),
        "betas": list(schedule.betas),
        "global_step": int(global_step),
        "optimizer": {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "weight_decay": optimizer.weight_decay,
            "step": optimizer.step_count,
        },
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(params[n].data.astype("<f8").tobytes())
            fh.write(optimizer.m[n].astype("<f8").tobytes())
            fh.write(optimizer.v[n].astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise ValueError(f"{path}: truncated header")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    config = ModelConfig(**header["config"])
    vocab = Vocab.from_dict(header["vocab"])
    offset = 16 + hlen
    params: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        for store in (params, m, v):
            if offset + nbytes > len(raw):
                raise ValueError(f"{path}: truncated parameter data")
            store[entry["name"]] = np.frombuffer(
                raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).copy()
            offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter data")
    opt = dict(header["optimizer"])
    opt["m"] = m
    opt["v"] = v
    return Checkpoint(version=version, config=config, vocab=vocab, params=params,
                      opt_state=opt, global_step=int(header["global_step"]),
                      betas=tuple(header["betas"]))


def restore_model(ckpt: Checkpoint) -> Model:
    """Build a Model from a checkpoint; shapes must match its config."""
    model = Model(ckpt.config, seed=0)
    params = model.parameters()
    if set(params) != set(ckpt.params):
        missing = set(params) ^ set(ckpt.params)
        raise ValueError(f"checkpoint parameter table mismatch: {sorted(missing)[:5]}")
    for name, arr in ckpt.params.items():
        if params[name].shape != arr.shape:
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, config {params[name].shape}")
        params[name].data = arr.copy()
    return model


def restore_optimizer(ckpt: Checkpoint, model: Model) -> AdamW:
    opt = AdamW(model.parameters(), lr=ckpt.opt_state["lr"],
                betas=(ckpt.opt_state["beta1"], ckpt.opt_state["beta2"]),
                eps=ckpt.opt_state["eps"], weight_decay=ckpt.opt_state["weight_decay"])
    opt.step_count = int(ckpt.opt_state["step"])
    for name in opt.m:
        opt.m[name] = ckpt.opt_state["m"][name].copy()
        opt.v[name] = ckpt.opt_state["v"][name].copy()
    return opt
