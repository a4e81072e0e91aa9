import numpy as np
import pytest
import torch

from compevent.autodiff import parameters
from compevent.data.dataset import DataConfig, generate_sample
from compevent.model import CompEvent, ModelConfig
from compevent.train import (
    TrainConfig,
    TrainingError,
    batch_indices,
    evaluate,
    load_model,
    mean_metrics,
    resume,
    save_model,
    train,
)

MODEL = ModelConfig(channels=4, event_bins=2, levels=2, blocks=1, seed=1)


@pytest.fixture(scope="module")
def samples():
    return [generate_sample(DataConfig(height=16, width=16, seed=2), i) for i in range(3)]


def _state(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def test_batch_indices_deterministic_epochs():
    seq = [i for s in range(6) for i in batch_indices(s, 2, 4, 0)]
    assert sorted(seq[:4]) == [0, 1, 2, 3] and sorted(seq[4:8]) == [0, 1, 2, 3]
    assert seq == [i for s in range(6) for i in batch_indices(s, 2, 4, 0)]
    assert seq != [i for s in range(6) for i in batch_indices(s, 2, 4, 1)]


def test_zero_steps_checkpoint_equals_init(tmp_path, samples):
    model = CompEvent(MODEL)
    init = _state(model)
    train(model, samples, TrainConfig(steps=0), tmp_path)
    loaded, header, _ = load_model(tmp_path / "final.ckpt")
    assert header["state.step"] == "0"
    for k, v in _state(loaded).items():
        assert torch.equal(v, init[k])


def test_resume_is_bit_exact(tmp_path, samples):
    cfg = TrainConfig(lr=1e-3, steps=4, batch=2, seed=5, eval_every=0)
    full = CompEvent(MODEL)
    ref = train(full, samples, cfg)

    part = CompEvent(MODEL)
    r1 = train(part, samples, TrainConfig(lr=1e-3, steps=2, batch=2, seed=5, eval_every=0))
    save_model(tmp_path / "mid.ckpt", part, cfg, r1["optimizer"], 2)
    model, opt, tcfg, step = resume(tmp_path / "mid.ckpt")
    assert step == 2 and tcfg == cfg
    r2 = train(model, samples, tcfg, optimizer=opt, start_step=step)
    assert r1["losses"] + r2["losses"] == ref["losses"]
    for k, v in _state(model).items():
        assert torch.equal(v, _state(full)[k])


def test_metrics_log_lines(tmp_path, samples):
    lines = []
    train(CompEvent(MODEL), samples, TrainConfig(steps=3, eval_every=2), tmp_path, on_line=lines.append)
    log = (tmp_path / "metrics.log").read_text().splitlines()
    assert log == lines
    assert log[0].startswith("step=1 loss=") and "psnr" not in log[0]
    assert log[1].startswith("step=2 loss=") and " psnr=" in log[1] and " ssim=" in log[1]
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "final.ckpt").exists()


def test_non_finite_loss_aborts_with_step(samples):
    model = CompEvent(MODEL)
    bad = [generate_sample(DataConfig(height=16, width=16, seed=2), 0)]
    bad[0].targets[:] = np.nan
    with pytest.raises(TrainingError) as exc:
        train(model, bad, TrainConfig(steps=3, batch=1, eval_every=0))
    assert exc.value.step == 1 and "step 1" in str(exc.value)


def test_identity_model_metrics_equal_baseline(samples):
    rows = evaluate(CompEvent(MODEL), samples)
    for r in rows:
        assert r["psnr"] == r["base_psnr"] and r["ssim"] == r["base_ssim"]
    m = mean_metrics(rows)
    assert m["psnr"] == m["base_psnr"]


def test_checkpoint_header_self_describing(tmp_path):
    model = CompEvent(ModelConfig(channels=4, event_bins=3, levels=2, blocks=1, freq_branch=False))
    save_model(tmp_path / "m.ckpt", model)
    loaded, header, _ = load_model(tmp_path / "m.ckpt")
    assert loaded.cfg == model.cfg and header["model.freq_branch"] == "off"
    assert len(parameters(loaded)) == len(parameters(model))
