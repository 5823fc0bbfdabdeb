"""Contrastive regularization on frozen extractor features.

The restored image (anchor) is pulled toward clear images (positives)
and pushed from hazy images (negatives) in the feature space of a fixed
conv stack: sum_i omega_i * D_i(anchor, pos) / D_i(anchor, neg), with D
the mean per-element L1 distance at tap i. Gradients flow through the
extractor into the anchor; the extractor itself never trains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import torch
from torch import nn
from torch.nn import functional as F

from .checkpoint import read_container
from .config import ExtractorConfig, LossConfig
from .errors import ConfigError, FormatError, InputError

# 16-conv classification topology used for the pretrained extractor
VGG19_WIDTHS = (64, 64, 128, 128, 256, 256, 256, 256,
                512, 512, 512, 512, 512, 512, 512, 512)
VGG19_POOL_AFTER = frozenset({2, 4, 8, 12, 16})

# reduced 13-conv stack for tests: same tap arity, a fraction of the flops
RANDOM_WIDTHS = (8, 8, 16, 16, 32, 32, 32, 32, 64, 64, 64, 64, 64)
RANDOM_POOL_AFTER = frozenset({2, 4, 8, 12})

DEFAULT_TAPS = (1, 3, 5, 9, 13)


class FeatureExtractor(nn.Module):
    """Frozen conv/ReLU/pool stack emitting activations at tap indices.

    Taps are 1-based conv indices; the tap is the post-ReLU activation
    of that conv (before any pool at the same position). kind="identity"
    bypasses the stack and emits the input itself as the single tap.
    """

    def __init__(self, widths=(), pool_after=frozenset(), tap_indices=DEFAULT_TAPS,
                 norm_mean=(0.0, 0.0, 0.0), norm_std=(1.0, 1.0, 1.0),
                 kind: str = "conv"):
        super().__init__()
        self.kind = kind
        self.tap_indices = tuple(tap_indices)
        self.pool_after = frozenset(pool_after)
        if kind == "identity":
            self.convs = nn.ModuleList()
            self.min_input = 1
        else:
            if not self.tap_indices or max(self.tap_indices) > len(widths):
                raise ConfigError(
                    f"tap indices {self.tap_indices} exceed stack depth {len(widths)}")
            convs = []
            prev = 3
            for w in widths:
                convs.append(nn.Conv2d(prev, w, 3, padding=1))
                prev = w
            self.convs = nn.ModuleList(convs)
            pools_seen = sum(1 for p in self.pool_after if p <= max(self.tap_indices))
            self.min_input = 2 ** pools_seen
        self.register_buffer("norm_mean", torch.tensor(norm_mean).view(1, 3, 1, 1))
        self.register_buffer("norm_std", torch.tensor(norm_std).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if self.kind == "identity":
            return [x]
        if x.dim() != 4 or x.shape[1] != 3:
            raise InputError(f"extractor expects Nx3xHxW, got {tuple(x.shape)}")
        if x.shape[2] < self.min_input or x.shape[3] < self.min_input:
            raise InputError(
                f"input {x.shape[2]}x{x.shape[3]} below extractor minimum {self.min_input}")
        taps = []
        y = (x - self.norm_mean) / self.norm_std
        for i, conv in enumerate(self.convs, start=1):
            y = F.relu(conv(y))
            if i in self.tap_indices:
                taps.append(y)
            if i == max(self.tap_indices):
                break
            if i in self.pool_after:
                y = F.max_pool2d(y, 2)
        return taps


def extract_features(image: torch.Tensor, G: FeatureExtractor) -> list[torch.Tensor]:
    return G(image)


def identity_extractor() -> FeatureExtractor:
    return FeatureExtractor(tap_indices=(1,), kind="identity")


def random_extractor(seed: int = 0, tap_indices=DEFAULT_TAPS) -> FeatureExtractor:
    """Seeded frozen random stack; stands in for the pretrained weights in tests."""
    G = FeatureExtractor(RANDOM_WIDTHS, RANDOM_POOL_AFTER, tap_indices)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in G.convs:
            fan_in = conv.weight.shape[1] * 9
            conv.weight.uniform_(-(6.0 / fan_in) ** 0.5, (6.0 / fan_in) ** 0.5, generator=gen)
            conv.bias.zero_()
    return G


def load_pretrained_extractor(path: str, tap_indices=DEFAULT_TAPS) -> FeatureExtractor:
    """Reads the 16-conv classification weights from a tensor container."""
    tensors, meta = read_container(path)
    G = FeatureExtractor(VGG19_WIDTHS, VGG19_POOL_AFTER, tap_indices)
    prev = 3
    with torch.no_grad():
        for k, width in enumerate(VGG19_WIDTHS, start=1):
            for suffix, shape in (("weight", (width, prev, 3, 3)), ("bias", (width,))):
                name = f"features.conv{k}.{suffix}"
                if name not in tensors:
                    raise FormatError(f"{path}: missing tensor {name}")
                if tuple(tensors[name].shape) != shape:
                    raise FormatError(
                        f"{path}: tensor {name} has shape {tuple(tensors[name].shape)}, "
                        f"expected {shape}")
                param = getattr(G.convs[k - 1], suffix)
                param.copy_(torch.from_numpy(tensors[name].copy()))
            prev = width
    for key in ("norm_mean", "norm_std"):
        if key not in meta or len(meta[key]) != 3:
            raise FormatError(f"{path}: metadata key {key} missing or not 3 values")
        getattr(G, key).copy_(torch.tensor(meta[key], dtype=torch.float32).view(1, 3, 1, 1))
    return G


def make_extractor(cfg: ExtractorConfig, tap_indices=DEFAULT_TAPS) -> FeatureExtractor:
    cfg.validate()
    if cfg.kind == "identity":
        return identity_extractor()
    if cfg.kind == "random":
        return random_extractor(cfg.seed, tap_indices)
    return load_pretrained_extractor(cfg.path, tap_indices)


@dataclass
class ContrastSample:
    """Roles for one anchor: its restoration, clear positives, hazy negatives.

    positives[0] is the anchor's own ground truth and negatives[0] its
    own hazy input; further entries come from other batch members.
    """

    anchor: Optional[torch.Tensor] = None
    positives: list[torch.Tensor] = field(default_factory=list)
    negatives: list[torch.Tensor] = field(default_factory=list)


def sample_contrast(batch_hazy: torch.Tensor, batch_clear: torch.Tensor,
                    anchor_index: int, cfg: LossConfig, rng: torch.Generator,
                    anchor: Optional[torch.Tensor] = None) -> ContrastSample:
    """Draws the positive/negative sets for one anchor, seeded by rng.

    Extra negatives are other hazy batch members drawn without
    replacement; extra positives are the clear images of those same
    draws, so at matched rates positives correspond to the selected
    negatives.
    """
    n = batch_hazy.shape[0]
    if batch_hazy.shape != batch_clear.shape:
        raise InputError(
            f"hazy/clear batches differ: {tuple(batch_hazy.shape)} vs {tuple(batch_clear.shape)}")
    if not 0 <= anchor_index < n:
        raise InputError(f"anchor index {anchor_index} out of range for batch {n}")
    if max(cfg.n_pos, cfg.n_neg) > n:
        raise ConfigError(
            f"loss sampling rates ({cfg.n_pos}, {cfg.n_neg}) exceed batch size {n}")
    others = [i for i in range(n) if i != anchor_index]
    picked: list[int] = []
    if max(cfg.n_pos, cfg.n_neg) > 1:
        perm = torch.randperm(len(others), generator=rng).tolist()
        picked = [others[j] for j in perm]
    neg_idx = [anchor_index] + picked[:cfg.n_neg - 1]
    pos_idx = [anchor_index] + picked[:cfg.n_pos - 1]
    return ContrastSample(
        anchor=anchor,
        positives=[batch_clear[i:i + 1] for i in pos_idx],
        negatives=[batch_hazy[i:i + 1] for i in neg_idx],
    )


def _set_distance(anchor_taps: list[torch.Tensor], images: list[torch.Tensor],
                  G: FeatureExtractor) -> list[torch.Tensor]:
    # mean per-element L1 at each tap, averaged over the image set
    with torch.no_grad():
        taps = G(torch.cat(images, dim=0))
    out = []
    for fa, fs in zip(anchor_taps, taps):
        out.append((fa - fs).abs().mean(dim=(1, 2, 3)).mean())
    return out


def cr_term(sample: ContrastSample, G: FeatureExtractor, cfg: LossConfig) -> torch.Tensor:
    """Weighted ratio sum over taps; differentiable w.r.t. the anchor only."""
    if sample.anchor is None:
        raise ConfigError("contrast sample has no anchor")
    if not sample.positives:
        raise ConfigError("contrast sample has no positives")
    if cfg.use_negatives and not sample.negatives:
        raise ConfigError("contrast sample has no negatives")
    for t in sample.positives + sample.negatives:
        if t.shape != sample.anchor.shape:
            raise InputError(
                f"sample member shape {tuple(t.shape)} != anchor {tuple(sample.anchor.shape)}")
    anchor_taps = G(sample.anchor)
    if len(anchor_taps) != len(cfg.omega):
        raise ConfigError(
            f"extractor emits {len(anchor_taps)} taps but omega has {len(cfg.omega)} weights")
    pos_d = _set_distance(anchor_taps, sample.positives, G)
    neg_d = _set_distance(anchor_taps, sample.negatives, G) if cfg.use_negatives else None
    total = sample.anchor.new_zeros(())
    for i, w in enumerate(cfg.omega):
        if cfg.use_negatives:
            total = total + w * pos_d[i] / neg_d[i].clamp_min(cfg.epsilon)
        else:
            total = total + w * pos_d[i]
    return total


class LossParts(NamedTuple):
    total: torch.Tensor
    recon: torch.Tensor
    cr: torch.Tensor


def total_loss(restored: torch.Tensor, clear: torch.Tensor,
               negatives: Optional[torch.Tensor], G: FeatureExtractor,
               cfg: LossConfig, samples: Optional[list[ContrastSample]] = None) -> LossParts:
    """L1 reconstruction plus beta-weighted contrast term.

    negatives holds each anchor's own hazy input, row-aligned with
    restored; pass prebuilt samples instead for multi-sample rates. With
    beta == 0 the returned total is the plain L1 tensor itself.
    """
    if restored.shape != clear.shape:
        raise InputError(
            f"restored shape {tuple(restored.shape)} != clear {tuple(clear.shape)}")
    recon = (restored - clear).abs().mean()
    if cfg.beta == 0:
        return LossParts(recon, recon, torch.zeros(()))
    if samples is None:
        if negatives is None or negatives.shape != restored.shape:
            raise InputError("negatives must be row-aligned with restored")
        samples = [
            ContrastSample(anchor=restored[n:n + 1],
                           positives=[clear[n:n + 1]],
                           negatives=[negatives[n:n + 1]])
            for n in range(restored.shape[0])
        ]
    else:
        samples = [
            ContrastSample(anchor=restored[n:n + 1], positives=s.positives,
                           negatives=s.negatives)
            for n, s in enumerate(samples)
        ]
    cr = torch.stack([cr_term(s, G, cfg) for s in samples]).mean()
    return LossParts(recon + cfg.beta * cr, recon, cr)
