"""Command-line entry point.

Subcommands: train, generate, inpaint, eval, noise-sim, grad-check.  A run
is described by one JSON config file; command-line flags override file
values.  Exit codes: 0 success, 2 config/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .checks import run_suite
from .diffusion import (
    NoiseSchedule,
    forward_to_step,
    make_linear_schedule,
    marginal_survival,
    schedule_from_betas,
)
from .model import Model, ModelConfig
from .sampling import SampleRequest, generate, inpaint
from .text import Vocab, bpe_train, build_char_vocab, decode, encode, ingest_corpus
from .training import (
    AdamW,
    Checkpoint,
    DivergenceError,
    TrainConfig,
    Trainer,
    denoising_perplexity,
    evaluate,
    load_checkpoint,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)


class ConfigError(ValueError):
    """Bad config file, flags, or input files (exit code 2)."""


@dataclass
class ModelSection:
    seq_len: int = 128
    embed_dim: int = 64
    unet_levels: int = 2
    blocks_per_level: int = 2
    ssm_state_dim: int = 4
    ssm_kernel_len: int | None = 16
    fourier_hidden: int = 128
    sequential_branches: bool = False


@dataclass
class ScheduleSection:
    steps: int = 8
    beta_start: float = 0.1
    beta_end: float = 0.3


@dataclass
class TokenizerSection:
    kind: str = "char"      # "char" | "bpe"
    bpe_merges: int = 0
    stride: int = 32


@dataclass
class TrainSection:
    batch_size: int = 16
    total_steps: int = 2000
    lr: float = 3e-4
    warmup_steps: int = 100
    weight_decay: float = 0.01
    checkpoint_interval: int = 500
    eval_interval: int = 500
    log_interval: int = 10
    clip_norm: float = 1.0
    holdout_fraction: float = 0.1
    per_batch_t: bool = False


@dataclass
class RunConfig:
    corpus: str | None = None   # None: the bundled corpus
    out_dir: str = "runs/default"
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    train: TrainSection = field(default_factory=TrainSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        kwargs = {}
        sections = {"model": ModelSection, "schedule": ScheduleSection,
                    "tokenizer": TokenizerSection, "train": TrainSection}
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for name, section_cls in sections.items():
            sub = d.pop(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            sub_allowed = {f.name for f in fields(section_cls)}
            sub_unknown = set(sub) - sub_allowed
            if sub_unknown:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(sub_unknown)}")
            kwargs[name] = section_cls(**sub)
        kwargs.update(d)
        try:
            cfg = cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.tokenizer.kind not in ("char", "bpe"):
            raise ConfigError(f"tokenizer.kind must be 'char' or 'bpe', got {self.tokenizer.kind!r}")
        if self.tokenizer.bpe_merges < 0 or self.tokenizer.bpe_merges > 512:
            raise ConfigError("tokenizer.bpe_merges must lie in [0, 512]")
        if self.tokenizer.stride < 1:
            raise ConfigError("tokenizer.stride must be >= 1")
        if not 1 <= self.schedule.steps <= 64:
            raise ConfigError("schedule.steps must lie in [1, 64]")
        if not 0.0 <= self.schedule.beta_start <= self.schedule.beta_end <= 1.0:
            raise ConfigError("schedule betas must satisfy 0 <= start <= end <= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        # model/train sections validate fully once vocab size is known
        try:
            self.train_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def model_config(self, vocab_size: int) -> ModelConfig:
        try:
            return ModelConfig(vocab_size=vocab_size,
                               diffusion_steps=self.schedule.steps,
                               **asdict(self.model))
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def schedule_obj(self) -> NoiseSchedule:
        return make_linear_schedule(self.schedule.steps,
                                    self.schedule.beta_start, self.schedule.beta_end)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **asdict(self.train))


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    d: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = d
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return RunConfig.from_dict(d)


def corpus_path(cfg: RunConfig) -> Path:
    if cfg.corpus is None:
        return Path(str(resources.files("tokendiff").joinpath("data/corpus.txt")))
    p = Path(cfg.corpus)
    if not p.exists():
        raise ConfigError(f"corpus file not found: {p}")
    return p


def build_vocab(cfg: RunConfig, corpus_text: str) -> Vocab:
    if cfg.tokenizer.kind == "char":
        return build_char_vocab(corpus_text)
    return bpe_train(corpus_text, cfg.tokenizer.bpe_merges)


def prepare_data(cfg: RunConfig) -> tuple[Vocab, np.ndarray, np.ndarray]:
    """Vocab plus (train, held-out) window matrices."""
    path = corpus_path(cfg)
    try:
        texts = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read corpus {path}: {e}") from e
    if not texts:
        raise ConfigError(f"corpus {path} is empty")
    vocab = build_vocab(cfg, texts)
    try:
        windows = ingest_corpus(path, cfg.model.seq_len, cfg.tokenizer.stride, vocab)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    mat = np.stack([w.ids for w in windows])
    n_hold = int(round(mat.shape[0] * cfg.train.holdout_fraction))
    n_hold = min(max(n_hold, 1), mat.shape[0] - 1) if mat.shape[0] > 1 else 0
    if n_hold == 0:
        return vocab, mat, mat[:0]
    return vocab, mat[:-n_hold], mat[-n_hold:]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab, train_mat, hold_mat = prepare_data(cfg)
    schedule = cfg.schedule_obj()
    model = Model(cfg.model_config(len(vocab)), seed=cfg.seed)
    tcfg = cfg.train_config()
    trainer = Trainer(model, train_mat, schedule, tcfg)
    vocab.save(out_dir / "vocab.json")

    metrics_path = out_dir / "metrics.csv"
    t0 = time.perf_counter()
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t_mean", "loss", "lr", "wallclock_s"])
        for step in range(tcfg.total_steps):
            stats = trainer.train_step(step)
            if step % tcfg.log_interval == 0 or step == tcfg.total_steps - 1:
                writer.writerow([stats.step, repr(stats.t_mean), repr(stats.loss),
                                 repr(stats.lr), f"{time.perf_counter() - t0:.3f}"])
                fh.flush()
            if (step + 1) % tcfg.checkpoint_interval == 0:
                save_checkpoint(out_dir / f"ckpt_{step + 1:06d}.sfdm", model, vocab,
                                schedule, trainer.optimizer, step + 1)
            if hold_mat.shape[0] and (step + 1) % tcfg.eval_interval == 0:
                ce = evaluate(model, hold_mat, schedule, seed=cfg.seed)
                print(f"step {step + 1}: eval CE by t: "
                      + ", ".join(f"{t}: {v:.4f}" for t, v in ce.items()))
    save_checkpoint(out_dir / "ckpt_final.sfdm", model, vocab, schedule,
                    trainer.optimizer, tcfg.total_steps)
    if hold_mat.shape[0]:
        ce = evaluate(model, hold_mat, schedule, seed=cfg.seed)
        ppl = denoising_perplexity(ce)
        print("final eval CE by t: " + ", ".join(f"{t}: {v:.4f}" for t, v in ce.items()))
        print("final denoising perplexity by t (exp of denoising CE; not an "
              "autoregressive perplexity): "
              + ", ".join(f"{t}: {v:.3f}" for t, v in ppl.items()))
    print(f"checkpoints and metrics written to {out_dir}")
    return 0


def _load_ckpt(path: str) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"checkpoint not found: {p}")
    try:
        return load_checkpoint(p)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _write_trace(path: str, trace, vocab: Vocab, steps: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, state in enumerate(trace):
            text = decode(state, vocab).replace("\\", "\\\\").replace("\n", "\\n")
            fh.write(f"t={steps - i}\t{text}\n")


def cmd_generate(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    model = restore_model(ckpt)
    length = args.length if args.length is not None else ckpt.config.seq_len
    req = SampleRequest(length=length, temperature=args.temperature, seed=args.seed)
    try:
        result = generate(model, req)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.trace:
        _write_trace(args.trace, result.trace, ckpt.vocab, ckpt.config.diffusion_steps)
    sys.stdout.write(decode(result.tokens, ckpt.vocab) + "\n")
    return 0


def _parse_mask(spec: str, length: int) -> np.ndarray:
    """Comma-separated inclusive ranges of frozen positions, e.g. '0-63,100-101'."""
    mask = np.zeros(length, dtype=bool)
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                a_s, b_s = part.split("-", 1)
                a, b = int(a_s), int(b_s)
            else:
                a = b = int(part)
        except ValueError as e:
            raise ConfigError(f"bad mask range {part!r}") from e
        if not 0 <= a <= b < length:
            raise ConfigError(f"mask range {part!r} out of bounds for length {length}")
        mask[a:b + 1] = True
    return mask


def cmd_inpaint(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    model = restore_model(ckpt)
    n = ckpt.config.seq_len
    p = Path(args.prompt_file)
    if not p.exists():
        raise ConfigError(f"prompt file not found: {p}")
    try:
        prompt_ids = encode(p.read_text(encoding="utf-8"), ckpt.vocab).ids
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if prompt_ids.shape[0] < n:
        raise ConfigError(f"prompt has {prompt_ids.shape[0]} tokens, need at least {n}")
    prompt_ids = prompt_ids[:n]
    mask = _parse_mask(args.mask, n)
    req = SampleRequest(length=n, temperature=args.temperature, seed=args.seed,
                        mode="inpaint", prompt=prompt_ids, freeze_mask=mask)
    result = inpaint(model, req)
    if args.trace:
        _write_trace(args.trace, result.trace, ckpt.vocab, ckpt.config.diffusion_steps)
    sys.stdout.write(decode(result.tokens, ckpt.vocab) + "\n")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    ckpt = _load_ckpt(checkpoint)
    model = restore_model(ckpt)
    schedule = schedule_from_betas(ckpt.betas)
    _, _, hold_mat = prepare_data(cfg)
    if hold_mat.shape[0] == 0:
        raise ConfigError("held-out split is empty; lower tokenizer.stride or holdout_fraction")
    ce = evaluate(model, hold_mat, schedule, seed=cfg.seed)
    ppl = denoising_perplexity(ce)
    for t in sorted(ce):
        print(f"t={t} CE={ce[t]:.6f} denoising_ppl={ppl[t]:.4f}")
    print("(denoising perplexity is exp of denoising CE; "
          "not an autoregressive perplexity)")
    return 0


def cmd_noise_sim(cfg: RunConfig, samples: int) -> int:
    path = corpus_path(cfg)
    texts = path.read_text(encoding="utf-8")
    vocab = build_vocab(cfg, texts)
    v = len(vocab)
    schedule = cfg.schedule_obj()
    writer = csv.writer(sys.stdout)
    writer.writerow(["t", "beta", "survival", "closed_form_match_rate",
                     "mc_match_rate", "abs_deviation"])
    for t in range(1, schedule.steps + 1):
        g = rng_mod.stream(cfg.seed, rng_mod.NOISE_SIM, t)
        a = marginal_survival(schedule, t)
        closed = a + (1.0 - a) / v
        x0 = g.integers(0, v, size=samples, dtype=np.int64)
        x_t = forward_to_step(x0, t, schedule, g, v)
        mc = float((x0 == x_t).mean())
        writer.writerow([t, repr(schedule.betas[t - 1]), repr(a), repr(closed),
                         repr(mc), repr(abs(closed - mc))])
    return 0


def cmd_grad_check() -> int:
    results = run_suite()
    worst = 0.0
    failed = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:36s} max_rel_err={r.max_rel_error:.3e} ({r.seconds:.2f}s) {status}")
        worst = max(worst, r.max_rel_error)
        if not r.passed:
            failed.append(r.name)
    print(f"worst case: {worst:.3e} over {len(results)} cases")
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 3
    print("all gradient checks passed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--corpus", default=None, help="override corpus path")
    p.add_argument("--out-dir", default=None, help="override output directory")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--total-steps", type=int, default=None, help="override train.total_steps")


def _overrides(args) -> dict:
    return {
        "corpus": args.corpus,
        "out_dir": getattr(args, "out_dir", None),
        "seed": args.seed,
        "train.total_steps": getattr(args, "total_steps", None),
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokendiff",
                                description="Discrete token-replacement diffusion for text")
    sub = p.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("train", help="train a denoiser on a text corpus")
    _add_config_args(pt)

    pg = sub.add_parser("generate", help="generate text from a checkpoint")
    pg.add_argument("--checkpoint", required=True)
    pg.add_argument("--length", type=int, default=None)
    pg.add_argument("--temperature", type=float, default=1.0)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--trace", default=None, help="write the per-step trace to this file")

    pi = sub.add_parser("inpaint", help="fill unfrozen positions of a prompt")
    pi.add_argument("--checkpoint", required=True)
    pi.add_argument("--prompt-file", required=True)
    pi.add_argument("--mask", required=True,
                    help="comma-separated inclusive ranges of FROZEN positions, e.g. 0-63")
    pi.add_argument("--temperature", type=float, default=1.0)
    pi.add_argument("--seed", type=int, default=0)
    pi.add_argument("--trace", default=None)

    pe = sub.add_parser("eval", help="denoising CE of a checkpoint on the held-out split")
    _add_config_args(pe)
    pe.add_argument("--checkpoint", required=True)

    pn = sub.add_parser("noise-sim", help="closed-form vs Monte Carlo corruption rates")
    _add_config_args(pn)
    pn.add_argument("--samples", type=int, default=100_000)

    sub.add_parser("grad-check", help="finite-difference check of every op")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(load_config(args.config, _overrides(args)))
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "inpaint":
            return cmd_inpaint(args)
        if args.command == "eval":
            return cmd_eval(load_config(args.config, _overrides(args)), args.checkpoint)
        if args.command == "noise-sim":
            return cmd_noise_sim(load_config(args.config, _overrides(args)), args.samples)
        if args.command == "grad-check":
            return cmd_grad_check()
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
