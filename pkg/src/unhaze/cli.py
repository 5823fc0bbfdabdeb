"""Command-line entry point: train, infer, eval, synth, params.

Exit codes: 0 success, 2 invalid config/input/file, 3 training abort.
Errors print one machine-parsable line to stderr. The AECR_SEED
environment variable overrides the configured training seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, load_params_into
from .config import _build_section, NetworkConfig, load_run_config
from .data import generate_synthetic_set, load_image, load_paired_dataset, save_image
from .errors import (ConfigError, FormatError, IngestionError, InputError,
                     TrainingError, UnhazeError)
from .metrics import evaluate_dirs
from .network import DehazeNet, count_parameters, parameter_breakdown
from .train import train


def _load_config(path: str):
    cfg = load_run_config(path)
    seed_env = os.environ.get("AECR_SEED")
    if seed_env is not None:
        try:
            cfg.train.seed = int(seed_env)
        except ValueError:
            raise ConfigError(f"AECR_SEED: not an integer: {seed_env!r}")
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    dataset = load_paired_dataset(cfg.data.hazy_dir, cfg.data.clear_dir)
    train(cfg, dataset, out_dir=args.out, resume=args.resume)
    return 0


def _model_from_checkpoint(path: str) -> DehazeNet:
    ckpt = load_checkpoint(path)
    if "network" not in ckpt.config:
        raise FormatError(f"{path}: checkpoint carries no network config")
    net_cfg = _build_section(NetworkConfig, ckpt.config["network"], "network")
    model = DehazeNet(net_cfg)
    load_params_into(model, {k: v for k, v in ckpt.tensors.items()
                             if k.startswith("model.")}, prefix="model.")
    return model


def _pad_multiple4(x: torch.Tensor) -> tuple[torch.Tensor, int, int]:
    H, W = x.shape[2], x.shape[3]
    pad_h = (4 - H % 4) % 4
    pad_w = (4 - W % 4) % 4
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    return x, H, W


def cmd_infer(args) -> int:
    torch.set_num_threads(1)
    model = _model_from_checkpoint(args.checkpoint)
    if os.path.isdir(args.input):
        names = sorted(f for f in os.listdir(args.input)
                       if f.lower().endswith((".png", ".jpg", ".jpeg")))
        inputs = [(os.path.join(args.input, f), f) for f in names]
    else:
        inputs = [(args.input, os.path.basename(args.input))]
    if not inputs:
        raise IngestionError(f"no images under {args.input}")
    os.makedirs(args.output, exist_ok=True)
    for path, fname in inputs:
        hazy = load_image(path)
        padded, H, W = _pad_multiple4(hazy)
        restored = model.restore(padded)[:, :, :H, :W]
        save_image(restored, os.path.join(args.output, fname))
    return 0


def cmd_eval(args) -> int:
    report = evaluate_dirs(args.pred, args.gt, args.report)
    print(f"mean_psnr={report.mean_psnr:.4f} mean_ssim={report.mean_ssim:.6f}")
    return 0


def cmd_params(args) -> int:
    cfg = _load_config(args.config)
    breakdown = parameter_breakdown(cfg.network)
    for section in sorted(breakdown):
        print(f"{section} {breakdown[section]}")
    print(f"total {count_parameters(cfg.network)}")
    return 0


def cmd_synth(args) -> int:
    generate_synthetic_set(args.clear, args.out, args.seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unhaze",
                                     description="single-image dehazing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="restore hazy images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM over matching directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="parameter count for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", help="generate synthetic hazy pairs")
    p.add_argument("--clear", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except UnhazeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
