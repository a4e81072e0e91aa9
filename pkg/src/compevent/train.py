"""Training loop, evaluation and checkpoint round-trips for the restoration model."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .autodiff import Adam, assign_parameters, load_checkpoint, parameters, save_checkpoint
from .data.dataset import Sample, to_tensors
from .data.metrics import psnr, ssim
from .model import CompEvent, ModelConfig, charbonnier_loss
from .tensor import NumericalError

log = logging.getLogger(__name__)

CENTER = 1


class TrainingError(NumericalError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    steps: int = 500
    batch: int = 2
    seed: int = 0
    eval_every: int = 100


def batch_indices(step: int, batch: int, n: int, seed: int) -> list[int]:
    """Sample indices for ``step``; a fresh seeded permutation every epoch.

    Depends only on the step number, which makes resumed runs line up exactly.
    """
    out, perms = [], {}
    for pos in range(step * batch, (step + 1) * batch):
        epoch = pos // n
        if epoch not in perms:
            perms[epoch] = np.random.default_rng([seed, epoch]).permutation(n)
        out.append(int(perms[epoch][pos % n]))
    return out


def header_text(model_cfg: ModelConfig, train_cfg: TrainConfig | None = None, step: int = 0) -> str:
    text = "".join(f"model.{line}" for line in model_cfg.to_text().splitlines(True))
    if train_cfg is not None:
        text += "".join(f"train.{k} = {v}\n" for k, v in dataclasses.asdict(train_cfg).items())
    text += f"state.step = {step}\n"
    return text


def parse_header(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def model_config_from_header(text: str) -> ModelConfig:
    values = parse_header(text)
    return ModelConfig.from_mapping({k[6:]: v for k, v in values.items() if k.startswith("model.")})


def save_model(path, model: CompEvent, train_cfg: TrainConfig | None = None,
               optimizer: Adam | None = None, step: int = 0) -> None:
    extra = optimizer.state_tensors() if optimizer is not None else None
    save_checkpoint(path, header_text(model.cfg, train_cfg, step), parameters(model), extra)


def load_model(path) -> tuple[CompEvent, dict[str, str], dict]:
    header, records = load_checkpoint(path)
    model = CompEvent(model_config_from_header(header))
    assign_parameters(parameters(model), records)
    return model, parse_header(header), records


@torch.no_grad()
def evaluate(model: CompEvent, samples: list[Sample], chunk: int = 4) -> list[dict]:
    """Centre-frame PSNR/SSIM of the model output and of the degraded input."""
    model.eval()
    rows = []
    for start in range(0, len(samples), chunk):
        part = samples[start : start + chunk]
        frames, grids, targets = to_tensors(part, model.cfg.event_bins)
        out = model.restore(frames, grids)
        for i, s in enumerate(part):
            pred = out[CENTER][i].numpy()
            clean = targets[CENTER][i].numpy()
            degraded = frames[CENTER][i].numpy()
            rows.append({
                "sample": s.name,
                "psnr": psnr(pred, clean),
                "ssim": ssim(pred, clean),
                "base_psnr": psnr(degraded, clean),
                "base_ssim": ssim(degraded, clean),
            })
    model.train()
    return rows


def mean_metrics(rows: list[dict]) -> dict[str, float]:
    keys = ("psnr", "ssim", "base_psnr", "base_ssim")
    if not rows:
        return {k: float("nan") for k in keys}
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def fmt(v: float) -> str:
    return f"{v:.6f}"


def train(
    model: CompEvent,
    train_samples: list[Sample],
    cfg: TrainConfig,
    out_dir: Path | None = None,
    eval_samples: list[Sample] | None = None,
    optimizer: Adam | None = None,
    start_step: int = 0,
    on_line: Callable[[str], None] | None = None,
) -> dict:
    """Run ``cfg.steps`` total optimizer steps (counting from ``start_step``).

    Writes ``metrics.log``, ``final.ckpt`` and ``best.ckpt`` into ``out_dir``
    when given.  Returns a summary with the loss history and final metrics.
    """
    if not train_samples and cfg.steps > start_step:
        raise ValueError("no training samples")
    params = parameters(model)
    opt = optimizer or Adam(params, lr=cfg.lr)
    eval_samples = train_samples if eval_samples is None else eval_samples
    bins = model.cfg.event_bins
    frames, grids, targets = to_tensors(train_samples, bins) if train_samples else ([], [], [])
    logfile = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        logfile = open(out_dir / "metrics.log", "a")

    def emit(line: str) -> None:
        if logfile is not None:
            logfile.write(line + "\n")
            logfile.flush()
        if on_line is not None:
            on_line(line)
        log.info(line)

    losses: list[float] = []
    best = -math.inf
    last_metrics = None
    model.train()
    try:
        for step in range(start_step, cfg.steps):
            idx = batch_indices(step, cfg.batch, len(train_samples), cfg.seed)
            fb = [f[idx] for f in frames]
            gb = [g[idx] for g in grids]
            tb = [t[idx] for t in targets]
            try:
                loss = charbonnier_loss(model(fb, gb), tb)
            except NumericalError as exc:
                raise TrainingError(f"step {step + 1}: {exc}", step + 1) from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step + 1}", step + 1)
            opt.zero_grad()
            loss.backward()
            try:
                opt.step()
            except NumericalError as exc:
                raise TrainingError(str(exc), step + 1) from exc
            losses.append(value)
            k = step + 1
            if cfg.eval_every > 0 and (k % cfg.eval_every == 0 or k == cfg.steps):
                last_metrics = mean_metrics(evaluate(model, eval_samples))
                emit(f"step={k} loss={fmt(value)} psnr={fmt(last_metrics['psnr'])} ssim={fmt(last_metrics['ssim'])}")
                if out_dir is not None and last_metrics["psnr"] > best:
                    best = last_metrics["psnr"]
                    save_model(out_dir / "best.ckpt", model, cfg, opt, k)
            else:
                emit(f"step={k} loss={fmt(value)}")
        if out_dir is not None:
            save_model(out_dir / "final.ckpt", model, cfg, opt, max(cfg.steps, start_step))
            if not (out_dir / "best.ckpt").exists():
                save_model(out_dir / "best.ckpt", model, cfg, opt, max(cfg.steps, start_step))
    finally:
        if logfile is not None:
            logfile.close()
    return {"losses": losses, "metrics": last_metrics, "optimizer": opt}


def resume(path) -> tuple[CompEvent, Adam, TrainConfig, int]:
    """Rebuild model, optimizer state and step counter from a training checkpoint."""
    model, header, records = load_model(path)
    tfields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for k, v in header.items():
        if k.startswith("train."):
            name = k[6:]
            kwargs[name] = float(v) if tfields[name].type in ("float", float) else int(v)
    cfg = TrainConfig(**kwargs)
    step = int(header.get("state.step", 0))
    opt = Adam(parameters(model), lr=cfg.lr)
    if any(k.startswith("adam.") for k in records):
        opt.load_state_tensors({k: v.re for k, v in records.items() if k.startswith("adam.")}, step)
    return model, opt, cfg, step
