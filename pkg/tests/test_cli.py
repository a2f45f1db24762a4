import json
from pathlib import Path

import numpy as np
import pytest

from tokendiff.cli import RunConfig, _parse_mask, build_vocab, load_config, main
from tokendiff.text import decode, encode


@pytest.fixture()
def small_run(tmp_path):
    """A fast end-to-end config on a tiny synthetic corpus."""
    corpus = tmp_path / "corpus.txt"
    base = "the cat sat on the mat. the dog ate the bone. "
    corpus.write_text(base * 40, encoding="utf-8")
    cfg = {
        "corpus": str(corpus),
        "out_dir": str(tmp_path / "run"),
        "seed": 7,
        "model": {"seq_len": 32, "embed_dim": 8, "unet_levels": 1,
                  "blocks_per_level": 1, "ssm_state_dim": 2, "ssm_kernel_len": 4,
                  "fourier_hidden": 8},
        "schedule": {"steps": 4, "beta_start": 0.1, "beta_end": 0.3},
        "tokenizer": {"kind": "char", "bpe_merges": 0, "stride": 8},
        "train": {"batch_size": 4, "total_steps": 30, "lr": 0.003,
                  "warmup_steps": 5, "weight_decay": 0.01,
                  "checkpoint_interval": 15, "eval_interval": 15,
                  "log_interval": 1, "clip_norm": 1.0,
                  "holdout_fraction": 0.2, "per_batch_t": False},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path, cfg


def test_config_roundtrip_equality(small_run):
    path, _ = small_run
    cfg = load_config(str(path))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_config_rejects_unknown_keys(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"corpse": "x"}), encoding="utf-8")
    with pytest.raises(ValueError, match="unknown config keys"):
        load_config(str(bad))
    bad.write_text(json.dumps({"train": {"batchsize": 4}}), encoding="utf-8")
    with pytest.raises(ValueError, match="batchsize"):
        load_config(str(bad))


def test_config_defaults_match_contract():
    cfg = RunConfig.from_dict({})
    assert cfg.schedule.steps == 8
    assert cfg.schedule.beta_start == 0.1 and cfg.schedule.beta_end == 0.3
    assert cfg.model.seq_len == 128 and cfg.model.embed_dim == 64
    assert cfg.model.unet_levels == 2 and cfg.model.blocks_per_level == 2
    assert cfg.model.ssm_state_dim == 4 and cfg.model.ssm_kernel_len == 16
    assert cfg.model.fourier_hidden == 128
    assert cfg.tokenizer.kind == "char"


def test_missing_corpus_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"corpus": str(tmp_path / "nope.txt"),
                               "out_dir": str(tmp_path / "o")}), encoding="utf-8")
    rc = main(["train", "--config", str(cfg)])
    assert rc == 2
    assert "nope.txt" in capsys.readouterr().err


def test_bad_config_file_exits_2(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "missing.json")])
    assert rc == 2


def test_train_generate_inpaint_cycle(small_run, capsys, tmp_path):
    path, raw = small_run
    assert main(["train", "--config", str(path)]) == 0
    out = Path(raw["out_dir"])
    metrics = (out / "metrics.csv").read_text().strip().splitlines()
    assert metrics[0] == "step,t_mean,loss,lr,wallclock_s"
    first = metrics[1].split(",")
    vocab_size = len(json.loads((out / "vocab.json").read_text())["tokens"])
    assert float(first[2]) == pytest.approx(np.log(vocab_size), abs=1e-9)
    ckpt = out / "ckpt_final.sfdm"
    assert ckpt.exists()
    capsys.readouterr()

    # deterministic generation at fixed temperature
    assert main(["generate", "--checkpoint", str(ckpt), "--temperature", "0",
                 "--seed", "3"]) == 0
    text_a = capsys.readouterr().out
    assert main(["generate", "--checkpoint", str(ckpt), "--temperature", "0",
                 "--seed", "3"]) == 0
    text_b = capsys.readouterr().out
    assert text_a == text_b and len(text_a.rstrip("\n")) == 32

    # inpaint with a fully frozen mask echoes the prompt
    prompt_file = tmp_path / "prompt.txt"
    prompt_file.write_text("the cat sat on the mat. the dog ate the bone. ",
                           encoding="utf-8")
    assert main(["inpaint", "--checkpoint", str(ckpt), "--prompt-file", str(prompt_file),
                 "--mask", "0-31", "--seed", "1"]) == 0
    echoed = capsys.readouterr().out.rstrip("\n")
    assert echoed == "the cat sat on the mat. the dog "

    # partial mask: frozen range matches prompt exactly
    assert main(["inpaint", "--checkpoint", str(ckpt), "--prompt-file", str(prompt_file),
                 "--mask", "0-15", "--temperature", "1.0", "--seed", "2"]) == 0
    partial = capsys.readouterr().out.rstrip("\n")
    assert partial[:16] == "the cat sat on t"

    # eval prints the per-step map with the metric caveat
    assert main(["eval", "--config", str(path), "--checkpoint", str(ckpt)]) == 0
    eval_out = capsys.readouterr().out
    assert "t=0" in eval_out and "denoising" in eval_out


def test_trace_file_annotated(small_run, capsys, tmp_path):
    path, raw = small_run
    main(["train", "--config", str(path)])
    capsys.readouterr()
    ckpt = str(Path(raw["out_dir"]) / "ckpt_final.sfdm")
    trace = tmp_path / "trace.txt"
    assert main(["generate", "--checkpoint", ckpt, "--seed", "0",
                 "--trace", str(trace)]) == 0
    lines = trace.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 5  # T+1 states for T=4
    assert lines[0].startswith("t=4\t") and lines[-1].startswith("t=0\t")


def test_mask_parsing():
    mask = _parse_mask("0-3,8,10-11", 16)
    expected = np.zeros(16, dtype=bool)
    expected[0:4] = True
    expected[8] = True
    expected[10:12] = True
    assert np.array_equal(mask, expected)
    with pytest.raises(ValueError):
        _parse_mask("0-99", 16)
    with pytest.raises(ValueError):
        _parse_mask("abc", 16)


def test_noise_sim_csv(small_run, capsys):
    path, _ = small_run
    samples = 100_000
    assert main(["noise-sim", "--config", str(path), "--samples", str(samples)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header = lines[0].split(",")
    assert header == ["t", "beta", "survival", "closed_form_match_rate",
                      "mc_match_rate", "abs_deviation"]
    assert len(lines) == 5  # 4 schedule steps
    for row in lines[1:]:
        cells = row.split(",")
        assert abs(float(cells[3]) - float(cells[4])) == pytest.approx(float(cells[5]))
        p = float(cells[3])
        sigma = np.sqrt(p * (1 - p) / samples)
        assert float(cells[5]) < 3 * sigma


def test_noise_sim_zero_betas_match_rate_one(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("abcd" * 50, encoding="utf-8")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "corpus": str(corpus), "out_dir": str(tmp_path / "o"),
        "schedule": {"steps": 3, "beta_start": 0.0, "beta_end": 0.0},
    }), encoding="utf-8")
    assert main(["noise-sim", "--config", str(cfg), "--samples", "5000"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    for row in lines[1:]:
        cells = row.split(",")
        assert float(cells[3]) == 1.0 and float(cells[4]) == 1.0


def test_noise_sim_exact_enumeration_row(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("abcd" * 50, encoding="utf-8")  # V = 4 distinct chars
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "corpus": str(corpus), "out_dir": str(tmp_path / "o"),
        "schedule": {"steps": 2, "beta_start": 0.5, "beta_end": 0.5},
    }), encoding="utf-8")
    assert main(["noise-sim", "--config", str(cfg), "--samples", "100000"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    t2 = lines[2].split(",")
    assert float(t2[3]) == pytest.approx(0.4375, abs=1e-12)


def test_grad_check_command(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "max_rel_err" in out and "all gradient checks passed" in out


def test_divergence_maps_to_exit_3(small_run, monkeypatch, capsys):
    from tokendiff.training import DivergenceError, Trainer

    def boom(self, step):
        raise DivergenceError("non-finite loss 'nan' at step 0")

    monkeypatch.setattr(Trainer, "train_step", boom)
    path, _ = small_run
    assert main(["train", "--config", str(path)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_flag_overrides_win_over_file(small_run, tmp_path):
    path, raw = small_run
    cfg = load_config(str(path), {"seed": 99, "train.total_steps": 5,
                                  "out_dir": str(tmp_path / "other")})
    assert cfg.seed == 99
    assert cfg.train.total_steps == 5
    assert cfg.out_dir == str(tmp_path / "other")


def test_corpus_vocab_roundtrip_on_bundled_default():
    cfg = RunConfig.from_dict({})
    from tokendiff.cli import corpus_path
    text = corpus_path(cfg).read_text(encoding="utf-8")
    vocab = build_vocab(cfg, text)
    sample = text[1000:1400]
    assert decode(encode(sample, vocab), vocab) == sample
