"""Autoencoder-style dehazing network.

Encoder: one stride-1 conv then two stride-2 convs (4x spatial
reduction). A stack of feature-attention blocks runs at the low
resolution, optionally followed by the deformable enhancement module.
Decoder: two stride-2 upsampling stages back to full resolution and a
linear 3-channel output conv. The two stride-2 encoder activations are
fused into the decoder, either by a learnable sigmoid blend (adaptive
mixup) or a plain addition, per config.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import NetworkConfig
from .deform import DeformConv2d, DfeModule
from .errors import ConfigError, InputError


def adaptive_mixup(f_down: torch.Tensor, f_up: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """sigma(theta) * f_down + (1 - sigma(theta)) * f_up.

    theta is an unconstrained scalar; the blend weight stays in (0, 1)
    so the output is elementwise between the two inputs.
    """
    if f_down.shape != f_up.shape:
        raise ConfigError(
            f"mixup operands differ in shape: {tuple(f_down.shape)} vs {tuple(f_up.shape)}")
    w = torch.sigmoid(theta)
    return w * f_down + (1 - w) * f_up


class FaBlock(nn.Module):
    """Residual block with channel and pixel attention gates.

    conv -> ReLU -> conv -> channel attention (multiplicative) ->
    pixel attention (multiplicative) -> add input. Attention bottleneck
    width is width // 8.
    """

    def __init__(self, width: int):
        super().__init__()
        reduced = max(width // 8, 1)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.ca1 = nn.Conv2d(width, reduced, 1)
        self.ca2 = nn.Conv2d(reduced, width, 1)
        self.pa1 = nn.Conv2d(width, reduced, 1)
        self.pa2 = nn.Conv2d(reduced, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.conv1.in_channels:
            raise ConfigError(
                f"block expects {self.conv1.in_channels} channels, got {x.shape[1]}")
        y = self.conv2(F.relu(self.conv1(x)))
        ca = torch.sigmoid(self.ca2(F.relu(self.ca1(y.mean(dim=(2, 3), keepdim=True)))))
        y = y * ca
        pa = torch.sigmoid(self.pa2(F.relu(self.pa1(y))))
        y = y * pa
        return x + y


class UpsampleConv(nn.Module):
    """Nearest-neighbor 2x upsampling followed by a 3x3 conv."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


def _up_stage(mode: str, in_ch: int, out_ch: int) -> nn.Module:
    if mode == "transposed":
        return nn.ConvTranspose2d(in_ch, out_ch, 3, stride=2, padding=1, output_padding=1)
    return UpsampleConv(in_ch, out_ch)


class DehazeNet(nn.Module):

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w0 = cfg.base_width
        w1, w2 = cfg.width_schedule
        self.head = nn.Conv2d(3, w0, 3, padding=1)
        self.down1 = nn.Conv2d(w0, w1, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.blocks = nn.ModuleList(FaBlock(w2) for _ in range(cfg.num_fa_blocks))
        self.dfe = DfeModule(w2) if cfg.use_dfe else None
        self.up1 = _up_stage(cfg.upsample_mode, w2, w1)
        self.up2 = _up_stage(cfg.upsample_mode, w1, w0)
        self.tail = nn.Conv2d(w0, 3, 3, padding=1)
        if cfg.use_mixup:
            self.theta1 = nn.Parameter(torch.zeros(()))
            self.theta2 = nn.Parameter(torch.zeros(()))

    def downsample(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (f_low, f_down1, f_down2); f_low is the H/4 bottleneck input."""
        if x.dim() != 4 or x.shape[1] != 3:
            raise InputError(f"expected Nx3xHxW input, got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise InputError(
                f"spatial dims must be divisible by 4, got {x.shape[2]}x{x.shape[3]}")
        f0 = F.relu(self.head(x))
        f_down1 = F.relu(self.down1(f0))
        f_down2 = F.relu(self.down2(f_down1))
        return f_down2, f_down1, f_down2

    def _fuse(self, f_down: torch.Tensor, f_up: torch.Tensor, theta) -> torch.Tensor:
        if self.cfg.use_mixup:
            return adaptive_mixup(f_down, f_up, theta)
        if self.cfg.use_plain_skip:
            return f_down + f_up
        return f_up

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Restored image, same shape as x. Unclamped; clamp at inference."""
        f_low, f_down1, f_down2 = self.downsample(x)
        b = f_low
        if self.dfe is not None and self.cfg.dfe_position == "before_blocks":
            b = self.dfe(b)
        for blk in self.blocks:
            b = blk(b)
        if self.dfe is not None and self.cfg.dfe_position == "after_blocks":
            b = self.dfe(b)
        u = self._fuse(f_down2, b, getattr(self, "theta1", None))
        u = F.relu(self.up1(u))
        u = self._fuse(f_down1, u, getattr(self, "theta2", None))
        u = F.relu(self.up2(u))
        return self.tail(u)

    def restore(self, x: torch.Tensor) -> torch.Tensor:
        """Inference-mode forward: output clamped to [0, 1]."""
        with torch.no_grad():
            return self.forward(x).clamp(0.0, 1.0)


def _fan_in(module: nn.Module) -> int:
    w = module.weight
    if isinstance(module, nn.ConvTranspose2d):
        return w.shape[0] * w.shape[2] * w.shape[3]
    return w.shape[1] * w.shape[2] * w.shape[3]


def init_weights(model: nn.Module, seed: int) -> None:
    """Seeded fan-in-scaled uniform conv init, zero biases.

    Offset predictors inside deformable layers are zeroed afterwards so
    those layers start as standard convolutions.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                bound = math.sqrt(6.0 / _fan_in(m))
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, DeformConv2d):
                bound = math.sqrt(6.0 / (m.weight.shape[1] * m.weight.shape[2] * m.weight.shape[3]))
                m.weight.uniform_(-bound, bound, generator=gen)
                m.bias.zero_()
        for m in model.modules():
            if isinstance(m, DeformConv2d):
                m.offset_conv.weight.zero_()
                m.offset_conv.bias.zero_()


def make_network(cfg: NetworkConfig, seed: int = 0) -> DehazeNet:
    model = DehazeNet(cfg)
    init_weights(model, seed)
    return model


def count_parameters(cfg: NetworkConfig) -> int:
    return sum(p.numel() for p in DehazeNet(cfg).parameters())


def parameter_breakdown(cfg: NetworkConfig) -> dict[str, int]:
    """Learnable-scalar count per top-level stage; values sum to the total."""
    model = DehazeNet(cfg)
    out: dict[str, int] = {}
    for name, p in model.named_parameters():
        section = name.split(".")[0]
        out[section] = out.get(section, 0) + p.numel()
    return out
