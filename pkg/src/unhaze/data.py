"""Paired hazy/clear ingestion, augmentation, and synthetic haze.

Synthesis follows the scattering model I = J*t + A*(1-t) with global
atmospheric light A and transmission t (scalar or smooth per-pixel
field), so the repo can generate its own desk-scale training pairs.
Directory convention matches RESIDE: hazy/<id>_<k>.png pairs with
clear/<id>.png, exact stem match as fallback.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import IngestionError, InputError

IMAGE_EXTS = (".png", ".jpg", ".jpeg")


def load_image(path: str) -> torch.Tensor:
    """8-bit image file -> (1,3,H,W) float32 in [0,1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise IngestionError(f"cannot decode {path}: {exc}")
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def save_image(tensor: torch.Tensor, path: str) -> None:
    """(1,3,H,W) or (3,H,W) in [0,1] -> 8-bit PNG/JPEG."""
    t = tensor.detach()
    if t.dim() == 4:
        t = t[0]
    arr = (t.clamp(0, 1) * 255.0).round().to(torch.uint8).permute(1, 2, 0).numpy()
    Image.fromarray(arr).save(path)


@dataclass
class ImagePair:
    hazy: torch.Tensor
    clear: torch.Tensor
    id: str


def _list_images(root: str) -> list[str]:
    if not os.path.isdir(root):
        raise IngestionError(f"not a directory: {root}")
    return sorted(f for f in os.listdir(root) if f.lower().endswith(IMAGE_EXTS))


def load_paired_dataset(hazy_dir: str, clear_dir: str) -> list[ImagePair]:
    """Deterministic sorted pair list; raises listing orphan hazy files."""
    hazy_files = _list_images(hazy_dir)
    clear_by_stem = {os.path.splitext(f)[0]: f for f in _list_images(clear_dir)}
    if not hazy_files:
        warnings.warn(f"no hazy images under {hazy_dir}")
        return []
    pairs = []
    orphans = []
    for fname in hazy_files:
        stem = os.path.splitext(fname)[0]
        prefix = stem.rsplit("_", 1)[0]
        match = clear_by_stem.get(prefix) or clear_by_stem.get(stem)
        if match is None:
            orphans.append(fname)
            continue
        pairs.append(ImagePair(
            hazy=load_image(os.path.join(hazy_dir, fname)),
            clear=load_image(os.path.join(clear_dir, match)),
            id=stem,
        ))
    if orphans:
        raise IngestionError(f"hazy files without clear counterpart: {', '.join(orphans)}")
    for p in pairs:
        if p.hazy.shape != p.clear.shape:
            raise IngestionError(
                f"pair {p.id}: hazy {tuple(p.hazy.shape)} vs clear {tuple(p.clear.shape)}")
    return pairs


@dataclass
class HazeParams:
    """Scattering parameters: atmospheric light A and transmission t."""

    A: float
    t: Union[float, torch.Tensor]

    def validate(self) -> None:
        if not 0.7 <= self.A <= 1.0:
            raise InputError(f"atmospheric light {self.A} outside [0.7, 1.0]")
        t = self.t if isinstance(self.t, torch.Tensor) else torch.tensor(float(self.t))
        if (t <= 0).any():
            raise InputError("transmission must be > 0 everywhere")
        if (t > 1).any():
            raise InputError("transmission must be <= 1 everywhere")


def synthesize_haze(clear: torch.Tensor, hp: HazeParams) -> torch.Tensor:
    """I = J*t + A*(1-t); preserves dtype, output clipped to [0,1]."""
    hp.validate()
    if clear.min() < 0 or clear.max() > 1:
        raise InputError("clear image values must lie in [0,1]")
    t = hp.t
    if isinstance(t, torch.Tensor):
        if t.dim() == 2:
            t = t.view(1, 1, *t.shape)
        t = t.to(clear.dtype)
    return (clear * t + hp.A * (1 - t)).clamp(0, 1)


def random_crop_flip(pair: ImagePair, size: int, rng: torch.Generator,
                     flip: bool = True) -> ImagePair:
    """Same window and flip decision for both images; seeded by rng."""
    H, W = pair.hazy.shape[2], pair.hazy.shape[3]
    if size > min(H, W):
        raise InputError(f"crop size {size} exceeds image {H}x{W}")
    if size % 4:
        raise InputError(f"crop size {size} not divisible by 4")
    y0 = int(torch.randint(0, H - size + 1, (1,), generator=rng))
    x0 = int(torch.randint(0, W - size + 1, (1,), generator=rng))
    hazy = pair.hazy[:, :, y0:y0 + size, x0:x0 + size]
    clear = pair.clear[:, :, y0:y0 + size, x0:x0 + size]
    if flip and int(torch.randint(0, 2, (1,), generator=rng)):
        hazy = hazy.flip(3)
        clear = clear.flip(3)
    return ImagePair(hazy=hazy, clear=clear, id=pair.id)


def smooth_transmission(shape: tuple[int, int], rng: torch.Generator,
                        t_min: float = 0.3, t_max: float = 0.95,
                        grid: int = 4) -> torch.Tensor:
    """Low-frequency (H,W) transmission field in [t_min, t_max]."""
    coarse = torch.rand((1, 1, grid, grid), generator=rng) * (t_max - t_min) + t_min
    return F.interpolate(coarse, size=shape, mode="bilinear", align_corners=True)[0, 0]


def make_clear_set(out_dir: str, count: int, size: int, seed: int) -> list[str]:
    """Writes smooth procedural scenes as 8-bit PNGs; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    gen = torch.Generator().manual_seed(seed)
    paths = []
    for i in range(count):
        base = torch.rand((1, 3, 4, 4), generator=gen)
        detail = torch.rand((1, 3, 16, 16), generator=gen)
        img = 0.7 * F.interpolate(base, size=(size, size), mode="bicubic", align_corners=False)
        img = img + 0.3 * F.interpolate(detail, size=(size, size), mode="bilinear",
                                        align_corners=False)
        path = os.path.join(out_dir, f"{i + 1}.png")
        save_image(img.clamp(0.02, 0.98), path)
        paths.append(path)
    return paths


def generate_synthetic_set(clear_dir: str, out_dir: str, seed: int,
                           t_range: tuple[float, float] = (0.3, 0.9),
                           a_range: tuple[float, float] = (0.7, 1.0)) -> dict:
    """Hazes every clear image with seeded scalar (A, t) draws.

    Writes <out>/hazy/<id>_1.png, <out>/clear/<id>.png and params.json
    recording each draw, so any hazy image can be regenerated exactly.
    """
    files = _list_images(clear_dir)
    if not files:
        raise IngestionError(f"no clear images under {clear_dir}")
    os.makedirs(os.path.join(out_dir, "hazy"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "clear"), exist_ok=True)
    gen = torch.Generator().manual_seed(seed)
    params = {"seed": seed, "images": {}}
    for fname in files:
        stem = os.path.splitext(fname)[0]
        clear = load_image(os.path.join(clear_dir, fname))
        a = a_range[0] + (a_range[1] - a_range[0]) * float(torch.rand((), generator=gen))
        t = t_range[0] + (t_range[1] - t_range[0]) * float(torch.rand((), generator=gen))
        hazy = synthesize_haze(clear, HazeParams(A=a, t=t))
        save_image(clear, os.path.join(out_dir, "clear", f"{stem}.png"))
        save_image(hazy, os.path.join(out_dir, "hazy", f"{stem}_1.png"))
        params["images"][stem] = {"A": a, "t": t}
    with open(os.path.join(out_dir, "params.json"), "w") as fh:
        json.dump(params, fh, indent=2, sort_keys=True)
    return params
