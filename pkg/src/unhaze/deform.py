"""Deformable convolution (offsets only, no modulation mask).

A regular conv predicts per-position fractional offsets for every
kernel tap; taps then sample the input by bilinear interpolation.
Coordinates outside the lattice read zero-valued phantom neighbors,
matching the zero-padding convention of the surrounding convs. With the
offset predictor at zero the layer is exactly a standard 3x3 conv,
which is the module's keystone test.

Offset channel layout: 2*K*K channels, pairs (dy_k, dx_k) in row-major
tap order, i.e. channel 2k is the y-offset of tap k.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, InputError


def bilinear_sample(plane: torch.Tensor, y: float, x: float) -> torch.Tensor:
    """Sample (C,H,W) or (H,W) at fractional (y, x) with zero phantom borders."""
    if not (math.isfinite(y) and math.isfinite(x)):
        raise InputError(f"non-finite sample coordinates ({y}, {x})")
    squeeze = plane.dim() == 2
    if squeeze:
        plane = plane.unsqueeze(0)
    C, H, W = plane.shape
    y0, x0 = math.floor(y), math.floor(x)
    wy, wx = y - y0, x - x0
    out = plane.new_zeros(C)
    for cy, cx, w in ((y0, x0, (1 - wy) * (1 - wx)),
                      (y0, x0 + 1, (1 - wy) * wx),
                      (y0 + 1, x0, wy * (1 - wx)),
                      (y0 + 1, x0 + 1, wy * wx)):
        if 0 <= cy < H and 0 <= cx < W and w != 0:
            out = out + w * plane[:, cy, cx]
    return out[0] if squeeze else out


def deformable_conv_forward(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor,
                            offsets: torch.Tensor) -> torch.Tensor:
    """Stride-1, same-padded deformable conv; differentiable in all args.

    x (N,C,H,W), weight (O,C,K,K), bias (O,), offsets (N,2K^2,H,W).
    """
    N, C, H, W = x.shape
    O, Cw, K, _ = weight.shape
    if Cw != C:
        raise ConfigError(f"kernel expects {Cw} channels, got {C}")
    T = K * K
    if offsets.shape != (N, 2 * T, H, W):
        raise ConfigError(
            f"offsets shape {tuple(offsets.shape)}, expected {(N, 2 * T, H, W)}")
    half = K // 2
    dy = torch.arange(K, dtype=x.dtype) - half
    taps_y = dy.repeat_interleave(K).view(1, T, 1, 1)
    taps_x = dy.repeat(K).view(1, T, 1, 1)
    grid_y = torch.arange(H, dtype=x.dtype).view(1, 1, H, 1)
    grid_x = torch.arange(W, dtype=x.dtype).view(1, 1, 1, W)
    py = grid_y + taps_y + offsets[:, 0::2]
    px = grid_x + taps_x + offsets[:, 1::2]

    y0 = py.floor()
    x0 = px.floor()
    wy = py - y0
    wx = px - x0
    y0l = y0.long()
    x0l = x0.long()

    flat = x.reshape(N, C, H * W)
    patches = x.new_zeros(N, C, T, H, W)
    for ddy, ddx, w in ((0, 0, (1 - wy) * (1 - wx)),
                        (0, 1, (1 - wy) * wx),
                        (1, 0, wy * (1 - wx)),
                        (1, 1, wy * wx)):
        cy = y0l + ddy
        cx = x0l + ddx
        valid = (cy >= 0) & (cy < H) & (cx >= 0) & (cx < W)
        idx = (cy.clamp(0, H - 1) * W + cx.clamp(0, W - 1)).reshape(N, 1, T * H * W)
        vals = flat.gather(2, idx.expand(N, C, T * H * W)).reshape(N, C, T, H, W)
        patches = patches + vals * (w * valid).unsqueeze(1)

    out = torch.matmul(weight.reshape(1, O, C * T),
                       patches.reshape(N, C * T, H * W)).reshape(N, O, H, W)
    return out + bias.view(1, O, 1, 1)


class DeformConv2d(nn.Module):

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3):
        super().__init__()
        k = kernel_size
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, k, k))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.offset_conv = nn.Conv2d(in_ch, 2 * k * k, k, padding=k // 2)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        bound = math.sqrt(6.0 / (self.weight.shape[1] * self.weight.shape[2] * self.weight.shape[3]))
        with torch.no_grad():
            self.weight.uniform_(-bound, bound)
            self.bias.zero_()
            # zero offsets: start as a standard conv
            self.offset_conv.weight.zero_()
            self.offset_conv.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.weight.shape[1]:
            raise ConfigError(
                f"layer expects {self.weight.shape[1]} channels, got {x.shape[1]}")
        offsets = self.offset_conv(x)
        return deformable_conv_forward(x, self.weight, self.bias, offsets)


class DfeModule(nn.Module):
    """Two deformable convs with a ReLU between; shape preserving."""

    def __init__(self, width: int, kernel_size: int = 3):
        super().__init__()
        self.conv1 = DeformConv2d(width, width, kernel_size)
        self.conv2 = DeformConv2d(width, width, kernel_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.relu(self.conv1(x)))
