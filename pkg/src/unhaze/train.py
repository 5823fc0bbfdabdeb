"""Optimization loop: hand-rolled Adam, per-step cosine schedule,
deterministic data order, periodic checkpoints, resumable state.

All randomness (shuffle, crops, flips, contrast draws) comes from one
seeded generator whose state rides along in every checkpoint, so a
resumed run continues the exact byte stream of the uninterrupted one.
"""

from __future__ import annotations

import csv
import math
import os
import sys
from dataclasses import dataclass, field

import torch

from .checkpoint import (Checkpoint, decode_rng_state, encode_rng_state,
                         load_checkpoint, load_params_into, save_checkpoint)
from .config import RunConfig
from .contrast import make_extractor, sample_contrast, total_loss
from .data import ImagePair, random_crop_flip
from .errors import FormatError, InputError, TrainingError
from .metrics import psnr
from .network import make_network

ADAM_EPS = 1e-8


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        raise InputError(f"total_steps must be > 0, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise InputError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    t: int = 0


def init_adam(params: dict[str, torch.Tensor]) -> AdamState:
    return AdamState(
        m={k: torch.zeros_like(p) for k, p in params.items()},
        v={k: torch.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = ADAM_EPS) -> None:
    """Bias-corrected in-place Adam update; moments decay on zero grads."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            elif not torch.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for {name}")
            m = state.m[name]
            v = state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.add_((m / bc1) / ((v / bc2).sqrt() + eps), alpha=-lr)


def _clip_gradients(grads: dict[str, torch.Tensor], max_norm: float) -> None:
    total = math.sqrt(sum(float(g.pow(2).sum()) for g in grads.values() if g is not None))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            if g is not None:
                g.mul_(scale)


def _batches(order: list[int], batch_size: int) -> list[list[int]]:
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


class _StepLog:
    """CSV sink for per-step scalars; header written once per file."""

    COLUMNS = ("step", "lr", "recon_loss", "cr_loss", "total")

    def __init__(self, path: str | None, append: bool):
        self.fh = None
        if path is not None:
            exists = os.path.exists(path) and append
            self.fh = open(path, "a" if append else "w", newline="")
            self.writer = csv.writer(self.fh)
            if not exists:
                self.writer.writerow(self.COLUMNS)

    def write(self, row: dict) -> None:
        if self.fh is not None:
            self.writer.writerow([row[c] for c in self.COLUMNS])
            self.fh.flush()

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def _snapshot(model, state: AdamState, cfg: RunConfig, epoch: int, step: int,
              gen: torch.Generator) -> Checkpoint:
    tensors = {f"model.{k}": v.detach().clone() for k, v in model.state_dict().items()}
    for k in state.m:
        tensors[f"optim.{k}.m"] = state.m[k].clone()
        tensors[f"optim.{k}.v"] = state.v[k].clone()
    return Checkpoint(tensors=tensors, config=cfg.to_dict(), epoch=epoch,
                      step=step, rng_state=encode_rng_state(gen))


def train(cfg: RunConfig, dataset: list[ImagePair], out_dir: str | None = None,
          resume: str | None = None) -> tuple[Checkpoint, list[dict]]:
    """Runs the full schedule; returns the final checkpoint and the
    per-step log rows produced by this invocation."""
    cfg.validate()
    if cfg.train.deterministic:
        torch.set_num_threads(1)
    if not dataset:
        raise TrainingError("empty dataset")
    tc = cfg.train
    steps_per_epoch = math.ceil(len(dataset) / tc.batch_size)
    total_steps = tc.epochs * steps_per_epoch

    model = make_network(cfg.network, seed=tc.seed)
    extractor = make_extractor(cfg.extractor, cfg.loss.tap_indices)
    params = dict(model.named_parameters())
    state = init_adam(params)
    gen = torch.Generator().manual_seed(tc.seed)
    start_epoch = 0
    global_step = 0

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.step >= total_steps:
            print(f"already complete: {resume} is at step {ckpt.step}/{total_steps}",
                  file=sys.stderr)
            return ckpt, []
        load_params_into(model, {k: v for k, v in ckpt.tensors.items()
                                 if k.startswith("model.")}, prefix="model.")
        with torch.no_grad():
            for k in state.m:
                for moment, store in (("m", state.m), ("v", state.v)):
                    key = f"optim.{k}.{moment}"
                    if key not in ckpt.tensors:
                        raise FormatError(f"{resume}: missing tensor {key}")
                    store[k].copy_(ckpt.tensors[key])
        state.t = ckpt.step
        decode_rng_state(gen, ckpt.rng_state)
        start_epoch = ckpt.epoch
        global_step = ckpt.step

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    log = _StepLog(os.path.join(out_dir, "metrics.csv") if out_dir else None,
                   append=resume is not None)
    history: list[dict] = []
    multi_sample = cfg.loss.n_pos > 1 or cfg.loss.n_neg > 1

    try:
        for epoch in range(start_epoch, tc.epochs):
            order = torch.randperm(len(dataset), generator=gen).tolist()
            for chunk in _batches(order, tc.batch_size):
                crop = min(tc.crop_size, *[min(dataset[i].hazy.shape[2:]) for i in chunk])
                crop -= crop % 4
                pairs = [random_crop_flip(dataset[i], crop, gen, flip=tc.hflip)
                         for i in chunk]
                hazy = torch.cat([p.hazy for p in pairs])
                clear = torch.cat([p.clear for p in pairs])

                lr = cosine_lr(global_step, total_steps, tc.lr0)
                restored = model(hazy)
                samples = None
                if cfg.loss.beta > 0 and multi_sample:
                    samples = [sample_contrast(hazy, clear, i, cfg.loss, gen)
                               for i in range(hazy.shape[0])]
                parts = total_loss(restored, clear, hazy, extractor, cfg.loss, samples)
                if not torch.isfinite(parts.total):
                    raise TrainingError(
                        f"non-finite loss at step {global_step}: "
                        f"recon={parts.recon.item()} cr={parts.cr.item()}")

                model.zero_grad(set_to_none=True)
                parts.total.backward()
                grads = {k: p.grad for k, p in params.items()}
                if tc.grad_clip > 0:
                    _clip_gradients(grads, tc.grad_clip)
                adam_step(params, grads, state, lr, tc.adam_beta1, tc.adam_beta2)
                global_step += 1

                row = {"step": global_step, "lr": lr,
                       "recon_loss": parts.recon.item(),
                       "cr_loss": parts.cr.item(),
                       "total": parts.total.item()}
                history.append(row)
                log.write(row)
                if tc.log_interval > 0 and global_step % tc.log_interval == 0:
                    batch_psnr = psnr(restored.detach().clamp(0, 1), clear)
                    print(f"step {global_step}/{total_steps} lr {lr:.3e} "
                          f"recon {row['recon_loss']:.4f} cr {row['cr_loss']:.4f} "
                          f"total {row['total']:.4f} psnr {batch_psnr:.2f}",
                          file=sys.stderr)

            if out_dir is not None and tc.checkpoint_interval > 0 \
                    and (epoch + 1) % tc.checkpoint_interval == 0 \
                    and epoch + 1 < tc.epochs:
                ckpt = _snapshot(model, state, cfg, epoch + 1, global_step, gen)
                save_checkpoint(ckpt, os.path.join(out_dir, f"epoch_{epoch + 1:04d}.aecr"))
    finally:
        log.close()

    final = _snapshot(model, state, cfg, tc.epochs, global_step, gen)
    if out_dir is not None:
        save_checkpoint(final, os.path.join(out_dir, "final.aecr"))
    return final, history
