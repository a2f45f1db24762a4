import numpy as np
import pytest
from support import tiny_config

from tokendiff.diffusion import make_linear_schedule
from tokendiff.model import Model
from tokendiff.training import (
    AdamW,
    TrainConfig,
    Trainer,
    adamw_update,
    clip_global_norm,
    evaluate,
    denoising_perplexity,
    load_checkpoint,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)


def test_adamw_first_step_hand_value():
    p, m, v = np.array([0.0]), np.array([0.0]), np.array([0.0])
    p2, m2, v2 = adamw_update(p, np.array([1.0]), m, v, step=1, lr=0.1,
                              beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0)
    assert p2[0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-12)
    assert m2[0] == pytest.approx(0.1) and v2[0] == pytest.approx(0.001)


def test_adamw_zero_grad_no_decay_is_noop():
    p, m, v = np.array([1.5]), np.array([0.0]), np.array([0.0])
    p2, _, _ = adamw_update(p, np.array([0.0]), m, v, step=1, lr=0.1,
                            beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0)
    assert p2[0] == 1.5


def test_adamw_pure_decay():
    p, m, v = np.array([1.0]), np.array([0.0]), np.array([0.0])
    p2, _, _ = adamw_update(p, np.array([0.0]), m, v, step=1, lr=0.1,
                            beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.1)
    assert p2[0] == pytest.approx(0.99, abs=1e-15)


def test_adamw_update_is_pure_replay_equivalent():
    g = np.random.default_rng(0)
    p, grad = g.normal(0, 1, 4), g.normal(0, 1, 4)
    m, v = g.uniform(0, 1, 4), g.uniform(0, 1, 4)
    args = dict(step=7, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01)
    out1 = adamw_update(p.copy(), grad.copy(), m.copy(), v.copy(), **args)
    out2 = adamw_update(p.copy(), grad.copy(), m.copy(), v.copy(), **args)
    for a, b in zip(out1, out2):
        assert a.tobytes() == b.tobytes()


def test_clip_global_norm():
    from tokendiff.numerics import Tensor
    params = {"a": Tensor(np.zeros(3), requires_grad=True)}
    params["a"].grad = np.array([3.0, 0.0, 4.0])
    norm = clip_global_norm(params, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.allclose(params["a"].grad, [0.6, 0.0, 0.8])


def _setup(seed=0, steps=2, **cfg_kw):
    cfg = tiny_config(diffusion_steps=steps)
    model = Model(cfg, seed=seed)
    sched = make_linear_schedule(steps, 0.1, 0.3)
    g = np.random.default_rng(seed)
    windows = g.integers(0, cfg.vocab_size, (30, cfg.seq_len))
    tcfg = TrainConfig(batch_size=4, total_steps=50, warmup_steps=5, seed=seed,
                       log_interval=1)
    return model, windows, sched, tcfg


def test_first_step_loss_is_ln_v():
    model, windows, sched, tcfg = _setup()
    trainer = Trainer(model, windows, sched, tcfg)
    stats = trainer.train_step(0)
    assert abs(stats.loss - np.log(model.config.vocab_size)) < 1e-9


def test_fixed_seed_identical_trajectory():
    losses = []
    for _ in range(2):
        model, windows, sched, tcfg = _setup(seed=3)
        trainer = Trainer(model, windows, sched, tcfg)
        losses.append([trainer.train_step(k).loss for k in range(5)])
    assert losses[0] == losses[1]


def test_degenerate_beta_zero_learns_copy():
    # all-zero schedule: target == input; the model only has to learn to copy
    cfg = tiny_config(vocab_size=4, seq_len=8, embed_dim=8, unet_levels=0,
                      blocks_per_level=1, fourier_hidden=16, diffusion_steps=2)
    model = Model(cfg, seed=1)
    sched = make_linear_schedule(2, 0.0, 0.0)
    g = np.random.default_rng(1)
    windows = g.integers(0, 4, (40, 8))
    tcfg = TrainConfig(batch_size=8, total_steps=200, lr=3e-2, warmup_steps=10, seed=1)
    trainer = Trainer(model, windows, sched, tcfg)
    loss = None
    for k in range(200):
        loss = trainer.train_step(k).loss
    assert loss < 0.1


def test_warmup_scales_lr_linearly_from_zero():
    model, windows, sched, tcfg = _setup()
    trainer = Trainer(model, windows, sched, tcfg)
    assert trainer._lr_at(0) == pytest.approx(tcfg.lr / tcfg.warmup_steps)
    assert trainer._lr_at(tcfg.warmup_steps - 1) == pytest.approx(tcfg.lr)
    assert trainer._lr_at(tcfg.warmup_steps + 10) == pytest.approx(tcfg.lr)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_steps=10, total_steps=5)
    with pytest.raises(ValueError):
        TrainConfig(holdout_fraction=1.0)


def test_evaluate_fresh_model_is_ln_v_everywhere():
    model, windows, sched, _ = _setup(seed=4)
    ce = evaluate(model, windows[:8], sched, seed=4)
    for t, value in ce.items():
        assert abs(value - np.log(model.config.vocab_size)) < 1e-12
    ppl = denoising_perplexity(ce)
    assert ppl[0] == pytest.approx(model.config.vocab_size)


def test_evaluate_deterministic_and_checks_empty():
    model, windows, sched, _ = _setup(seed=5)
    a = evaluate(model, windows[:6], sched, seed=5)
    b = evaluate(model, windows[:6], sched, seed=5)
    assert a == b
    with pytest.raises(ValueError):
        evaluate(model, windows[:0], sched, seed=5)


def _train_some(trainer, start, count):
    return [trainer.train_step(k).loss for k in range(start, start + count)]


def test_checkpoint_roundtrip_identical(tmp_path):
    model, windows, sched, tcfg = _setup(seed=6)
    trainer = Trainer(model, windows, sched, tcfg)
    _train_some(trainer, 0, 3)
    vocab_stub = _vocab_for(model.config.vocab_size)
    p1 = tmp_path / "a.sfdm"
    save_checkpoint(p1, model, vocab_stub, sched, trainer.optimizer, 3)
    ckpt = load_checkpoint(p1)
    restored = restore_model(ckpt)
    for name, tensor in model.parameters().items():
        assert np.array_equal(tensor.data, restored.parameters()[name].data)
    # save -> load -> save is byte-identical
    opt2 = restore_optimizer(ckpt, restored)
    p2 = tmp_path / "b.sfdm"
    save_checkpoint(p2, restored, ckpt.vocab, sched, opt2, ckpt.global_step)
    assert p1.read_bytes() == p2.read_bytes()


def _vocab_for(v):
    from tokendiff.text import Vocab
    import string
    return Vocab(id_to_token=list(string.ascii_lowercase[:v]))


def test_checkpoint_rejects_corruption(tmp_path):
    model, windows, sched, tcfg = _setup(seed=7)
    trainer = Trainer(model, windows, sched, tcfg)
    path = tmp_path / "c.sfdm"
    save_checkpoint(path, model, _vocab_for(model.config.vocab_size), sched,
                    trainer.optimizer, 0)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    bad = tmp_path / "bad.sfdm"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_checkpoint(bad)
    trunc = tmp_path / "trunc.sfdm"
    trunc.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ValueError):
        load_checkpoint(trunc)


def test_continuation_matches_uninterrupted_run(tmp_path):
    seed = 8
    model, windows, sched, tcfg = _setup(seed=seed)
    trainer = Trainer(model, windows, sched, tcfg)
    _train_some(trainer, 0, 4)
    path = tmp_path / "k.sfdm"
    save_checkpoint(path, model, _vocab_for(model.config.vocab_size), sched,
                    trainer.optimizer, 4)
    uninterrupted = _train_some(trainer, 4, 5)

    ckpt = load_checkpoint(path)
    model2 = restore_model(ckpt)
    opt2 = restore_optimizer(ckpt, model2)
    trainer2 = Trainer(model2, windows, sched, tcfg, optimizer=opt2)
    resumed = _train_some(trainer2, 4, 5)
    assert resumed == uninterrupted
    for name, tensor in model.parameters().items():
        assert tensor.data.tobytes() == model2.parameters()[name].data.tobytes()


def test_divergence_error_on_nonfinite_loss():
    from tokendiff.training import DivergenceError
    model, windows, sched, tcfg = _setup(seed=9)
    model.parameters()["head.b"].data[:] = np.inf
    trainer = Trainer(model, windows, sched, tcfg)
    with pytest.raises((DivergenceError, ValueError)):
        trainer.train_step(0)


def test_trainer_rejects_schedule_mismatch():
    model, windows, _, tcfg = _setup(steps=2)
    wrong = make_linear_schedule(3, 0.1, 0.3)
    with pytest.raises(ValueError):
        Trainer(model, windows, wrong, tcfg)
