"""Batch command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .data.dataset import (
    N_FRAMES,
    generate_sample,
    ppm_bytes,
    read_dataset,
    read_image,
    write_dataset,
)
from .data.events import read_events, voxelize
from .model import VARIANT_NAMES, CompEvent, variant_config
from .tensor import FormatError, NumericalError
from .train import (
    evaluate,
    fmt,
    load_model,
    mean_metrics,
    resume,
    train,
)

log = logging.getLogger("compevent")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(RuntimeError):
    pass


def _out_dir(args, cfg: RunConfig, fallback: str) -> Path:
    d = Path(args.out or fallback)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {d}: {exc}") from None
    return d


def _emit(lines: list[str], out: Path | None, name: str) -> None:
    for line in lines:
        print(line)
    if out is not None:
        (out / name).write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def _load_split(cfg: RunConfig, split: str):
    if not cfg["data_dir"]:
        raise ConfigError("data_dir is not set")
    root = Path(cfg["data_dir"]) / split
    if not root.is_dir():
        raise DataError(f"dataset split {root} does not exist")
    samples = read_dataset(root)
    shapes = {s.frames.shape for s in samples}
    if len(shapes) > 1:
        raise DataError(f"samples in {root} have mixed shapes {sorted(shapes)}")
    return samples


def _require_checkpoint(args) -> Path:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    p = Path(args.checkpoint)
    if not p.is_file():
        raise DataError(f"checkpoint {p} does not exist")
    return p


def _check_compat(model: CompEvent, cfg: RunConfig) -> None:
    """Model keys set explicitly in the run config must agree with the checkpoint."""
    mc = model.cfg
    for key in ("channels", "event_bins", "levels", "blocks", "fusion", "temporal", "freq_branch", "cln"):
        if key in cfg.explicit and cfg[key] != getattr(mc, key):
            raise ConfigError(f"config {key} = {cfg[key]} does not match checkpoint ({getattr(mc, key)})")


# --- verbs ---------------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg, cfg["data_dir"] or "data")
    dcfg = cfg.data()
    if cfg["image_format"] not in ("cten", "ppm"):
        raise ConfigError(f"image_format must be cten or ppm, got {cfg['image_format']!r}")
    manifest = []
    for split, n in (("train", cfg["n_train"]), ("eval", cfg["n_eval"])):
        if n < 0:
            raise ConfigError(f"n_{split} must be >= 0")
        samples = [generate_sample(dcfg, i, split) for i in range(n)]
        (out / split).mkdir(exist_ok=True)
        write_dataset(out / split, samples, cfg["image_format"])
        manifest += [f"{split}/{s.name}" for s in samples]
    (out / "manifest.txt").write_text("".join(m + "\n" for m in manifest), encoding="utf-8")
    cfg.write(out)
    print(f"wrote {len(manifest)} samples to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg, "run")
    train_samples = _load_split(cfg, "train")
    eval_samples = _load_split(cfg, cfg["eval_split"])
    cfg.write(out)
    if args.checkpoint:
        model, opt, tcfg, step = resume(_require_checkpoint(args))
        _check_compat(model, cfg)
        if "steps" in cfg.explicit:
            tcfg = cfg.train(lr=tcfg.lr, batch=tcfg.batch, seed=tcfg.seed, eval_every=tcfg.eval_every)
        result = train(model, train_samples, tcfg, out, eval_samples, opt, step, on_line=print)
    else:
        model = CompEvent(cfg.model())
        tcfg = cfg.train()
        result = train(model, train_samples, tcfg, out, eval_samples, on_line=print)
    if result["losses"]:
        print(f"loss_initial={fmt(result['losses'][0])} loss_final={fmt(result['losses'][-1])}")
    return EXIT_OK


def eval_lines(rows: list[dict]) -> list[str]:
    lines = [
        f"sample={r['sample']} psnr={fmt(r['psnr'])} ssim={fmt(r['ssim'])} "
        f"base_psnr={fmt(r['base_psnr'])} base_ssim={fmt(r['base_ssim'])}"
        for r in rows
    ]
    m = mean_metrics(rows)
    lines.append(
        f"sample=mean psnr={fmt(m['psnr'])} ssim={fmt(m['ssim'])} "
        f"base_psnr={fmt(m['base_psnr'])} base_ssim={fmt(m['base_ssim'])}"
    )
    return lines


def cmd_eval(args, cfg: RunConfig) -> int:
    model, _, _ = load_model(_require_checkpoint(args))
    _check_compat(model, cfg)
    samples = _load_split(cfg, cfg["eval_split"])
    out = _out_dir(args, cfg, ".") if args.out else None
    if out is not None:
        cfg.write(out)
    _emit(eval_lines(evaluate(model, samples)), out, "eval.txt")
    return EXIT_OK


def _infer_inputs(d: Path, bins: int):
    frames, grids = [], []
    for k in range(N_FRAMES):
        cands = [d / f"frame_{k}.ppm", d / f"frame_{k}.cten"]
        path = next((c for c in cands if c.is_file()), None)
        if path is None:
            raise DataError(f"missing frame file frame_{k}.ppm or frame_{k}.cten in {d}")
        ev_path = d / f"events_{k}.evt"
        if not ev_path.is_file():
            raise DataError(f"missing event file {ev_path}")
        img = read_image(path)
        es = read_events(ev_path)
        if (es.height, es.width) != img.shape[-2:]:
            raise DataError(
                f"resolution mismatch: frame {path.name} is {img.shape[-1]}x{img.shape[-2]}, "
                f"events {ev_path.name} are {es.width}x{es.height}"
            )
        frames.append(torch.from_numpy(img[None].astype(np.float32)))
        grids.append(torch.from_numpy(voxelize(es, bins)[None].astype(np.float32)))
    shapes = {tuple(f.shape) for f in frames}
    if len(shapes) > 1:
        raise DataError(f"frames have different resolutions: {sorted(shapes)}")
    return frames, grids


def cmd_infer(args, cfg: RunConfig) -> int:
    model, _, _ = load_model(_require_checkpoint(args))
    _check_compat(model, cfg)
    if not cfg["input_dir"]:
        raise ConfigError("input_dir is not set")
    d = Path(cfg["input_dir"])
    if not d.is_dir():
        raise DataError(f"input directory {d} does not exist")
    frames, grids = _infer_inputs(d, model.cfg.event_bins)
    out = _out_dir(args, cfg, "restored")
    cfg.write(out)
    model.eval()
    with torch.no_grad():
        restored = model.restore(frames, grids)
    for k, img in enumerate(restored):
        (out / f"restored_{k}.ppm").write_bytes(ppm_bytes(img[0].numpy()))
    print(f"wrote {len(restored)} frames to {out}")
    return EXIT_OK


def cmd_grad_check(args, cfg: RunConfig) -> int:
    from .checks import GRAD_OPS, GradCheckSettings, run_grad_checks

    ops = GRAD_OPS if cfg["gc_ops"] in ("", "all") else tuple(o.strip() for o in cfg["gc_ops"].split(","))
    corrupt = [o.strip() for o in cfg["gc_corrupt"].split(",") if o.strip()]
    for o in (*ops, *corrupt):
        if o not in GRAD_OPS:
            raise ConfigError(f"unknown grad-check op {o!r}; choose from {', '.join(GRAD_OPS)}")
    settings = GradCheckSettings(cfg["gc_h"], cfg["gc_tol"], cfg["gc_samples"], cfg["gc_e2e_samples"], cfg["seed"])
    reports = run_grad_checks(settings, ops, corrupt)
    lines = [r.line() for r in reports]
    failed = [r.name for r in reports if not r.passed]
    lines.append(f"summary passed={len(reports) - len(failed)} failed={len(failed)}"
                 + (f" ops={','.join(failed)}" if failed else ""))
    out = _out_dir(args, cfg, ".") if args.out else None
    if out is not None:
        cfg.write(out)
    _emit(lines, out, "gradcheck.txt")
    return EXIT_NUMERIC if failed else EXIT_OK


def _int_list(raw: str, key: str) -> list[int]:
    try:
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of integers") from None


def cmd_ablate(args, cfg: RunConfig) -> int:
    letters = [v.strip() for v in cfg["variants"].split(",") if v.strip()]
    for v in letters:
        if v not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(VARIANT_NAMES)}")
    seeds = _int_list(cfg["seeds"], "seeds")
    if not letters or not seeds:
        raise ConfigError("ablate needs at least one variant and one seed")
    train_samples = _load_split(cfg, "train")
    eval_samples = _load_split(cfg, cfg["eval_split"])
    out = _out_dir(args, cfg, "ablation")
    cfg.write(out)
    lines = []
    for v in letters:
        psnrs, ssims = [], []
        for seed in seeds:
            model = CompEvent(variant_config(v, cfg.model(seed=seed)))
            tcfg = cfg.train(seed=seed, eval_every=0)
            train(model, train_samples, tcfg, out / f"{v}_seed{seed}", eval_samples)
            m = mean_metrics(evaluate(model, eval_samples))
            psnrs.append(m["psnr"])
            ssims.append(m["ssim"])
            print(f"variant={v} seed={seed} psnr={fmt(m['psnr'])} ssim={fmt(m['ssim'])}", flush=True)
        lines.append(f"variant={v} name={VARIANT_NAMES[v].replace(' ', '_')} "
                     f"psnr={fmt(float(np.mean(psnrs)))} ssim={fmt(float(np.mean(ssims)))} seeds={len(seeds)}")
    _emit(lines, out, "ablation.txt")
    return EXIT_OK


def cmd_selftest(args, cfg: RunConfig) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    lines = [f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip() for name, ok, detail in results]
    out = _out_dir(args, cfg, ".") if args.out else None
    _emit(lines, out, "selftest.txt")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "grad-check": cmd_grad_check,
    "ablate": cmd_ablate,
    "selftest": cmd_selftest,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="compevent", description="Complex-valued frame+event restoration toolkit.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _threads() -> None:
    raw = os.environ.get("COMPNET_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"COMPNET_THREADS must be an integer, got {raw!r}") from None
    if n > 0:
        torch.set_num_threads(n)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _threads()
        cfg = RunConfig.load(args.config, args.set)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
