"""Configuration dataclasses and strict JSON loading.

Every section of a run config maps 1:1 to a dataclass here.  Parsing is
strict: unknown keys are rejected with the full field path (e.g.
``loss.n_neg``) so CLI errors point at the offending entry.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError

UPSAMPLE_MODES = ("transposed", "nearest")
DFE_POSITIONS = ("after_blocks", "before_blocks")
EXTRACTOR_KINDS = ("random", "pretrained", "identity")


@dataclass
class NetworkConfig:
    base_width: int = 64
    width_schedule: tuple[int, int] = (64, 128)
    num_fa_blocks: int = 6
    use_mixup: bool = True
    use_dfe: bool = True
    use_plain_skip: bool = False
    upsample_mode: str = "transposed"
    dfe_position: str = "after_blocks"

    def validate(self, path: str = "network") -> None:
        if self.base_width < 1:
            raise ConfigError(f"{path}.base_width: must be >= 1")
        if len(self.width_schedule) != 2 or any(w < 1 for w in self.width_schedule):
            raise ConfigError(f"{path}.width_schedule: expected two positive widths")
        # 0 blocks is a degenerate but countable configuration
        if self.num_fa_blocks < 0:
            raise ConfigError(f"{path}.num_fa_blocks: must be >= 0")
        if self.use_mixup and self.use_plain_skip:
            raise ConfigError(f"{path}.use_plain_skip: mutually exclusive with use_mixup")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ConfigError(f"{path}.upsample_mode: expected one of {UPSAMPLE_MODES}")
        if self.dfe_position not in DFE_POSITIONS:
            raise ConfigError(f"{path}.dfe_position: expected one of {DFE_POSITIONS}")


@dataclass
class LossConfig:
    beta: float = 0.1
    omega: tuple[float, ...] = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
    tap_indices: tuple[int, ...] = (1, 3, 5, 9, 13)
    n_pos: int = 1
    n_neg: int = 1
    epsilon: float = 1e-7
    use_negatives: bool = True

    def validate(self, path: str = "loss") -> None:
        if self.beta < 0:
            raise ConfigError(f"{path}.beta: must be >= 0")
        if len(self.omega) != len(self.tap_indices):
            raise ConfigError(f"{path}.omega: length must match tap_indices")
        if any(w <= 0 for w in self.omega):
            raise ConfigError(f"{path}.omega: weights must be > 0")
        if self.n_pos < 1:
            raise ConfigError(f"{path}.n_pos: must be >= 1")
        if self.n_neg < 1:
            raise ConfigError(f"{path}.n_neg: must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError(f"{path}.epsilon: must be > 0")


@dataclass
class TrainConfig:
    lr0: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 100
    crop_size: int = 240
    seed: int = 0
    hflip: bool = True
    grad_clip: float = 0.0
    log_interval: int = 50
    checkpoint_interval: int = 1
    deterministic: bool = True

    def validate(self, path: str = "train") -> None:
        if self.lr0 <= 0:
            raise ConfigError(f"{path}.lr0: must be > 0")
        if not 0 <= self.adam_beta1 < 1:
            raise ConfigError(f"{path}.adam_beta1: must be in [0, 1)")
        if not 0 <= self.adam_beta2 < 1:
            raise ConfigError(f"{path}.adam_beta2: must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError(f"{path}.batch_size: must be >= 1")
        if self.epochs < 1:
            raise ConfigError(f"{path}.epochs: must be >= 1")
        if self.crop_size < 4 or self.crop_size % 4 != 0:
            raise ConfigError(f"{path}.crop_size: must be a positive multiple of 4")
        if self.grad_clip < 0:
            raise ConfigError(f"{path}.grad_clip: must be >= 0")
        if self.log_interval < 1:
            raise ConfigError(f"{path}.log_interval: must be >= 1")
        if self.checkpoint_interval < 1:
            raise ConfigError(f"{path}.checkpoint_interval: must be >= 1")


@dataclass
class DataConfig:
    hazy_dir: str = ""
    clear_dir: str = ""

    def validate(self, path: str = "data") -> None:
        pass


@dataclass
class ExtractorConfig:
    kind: str = "random"
    path: str = ""
    seed: int = 0

    def validate(self, path: str = "extractor") -> None:
        if self.kind not in EXTRACTOR_KINDS:
            raise ConfigError(f"{path}.kind: expected one of {EXTRACTOR_KINDS}")
        if self.kind == "pretrained" and not self.path:
            raise ConfigError(f"{path}.path: required for pretrained extractor")


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)

    def validate(self) -> None:
        self.network.validate()
        self.loss.validate()
        self.train.validate()
        self.data.validate()
        self.extractor.validate()
        if self.loss.n_pos > self.train.batch_size:
            raise ConfigError("loss.n_pos: exceeds train.batch_size")
        if self.loss.n_neg > self.train.batch_size:
            raise ConfigError("loss.n_neg: exceeds train.batch_size")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, target_type: Any, path: str) -> Any:
    """Light type coercion for JSON-sourced values."""
    if target_type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
        return value
    if target_type is bool and not isinstance(value, bool):
        raise ConfigError(f"{path}: expected boolean, got {value!r}")
    if target_type is str and not isinstance(value, str):
        raise ConfigError(f"{path}: expected string, got {value!r}")
    return value


def _build_section(dc_type: type, raw: Any, path: str) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for name, value in raw.items():
        f = fields[name]
        fpath = f"{path}.{name}"
        if isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            origin = f.type if isinstance(f.type, type) else None
            base = {"int": int, "float": float, "bool": bool, "str": str}.get(str(f.type), origin)
            kwargs[name] = _coerce(value, base, fpath) if base else value
    return dc_type(**kwargs)


# the "extractor" section uses shorthand: {"random": seed} or {"pretrained": path}
def _build_extractor(raw: Any, path: str = "extractor") -> ExtractorConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    if set(raw) == {"random"}:
        if not isinstance(raw["random"], int) or isinstance(raw["random"], bool):
            raise ConfigError(f"{path}.random: expected integer seed")
        return ExtractorConfig(kind="random", seed=raw["random"])
    if set(raw) == {"pretrained"}:
        if not isinstance(raw["pretrained"], str):
            raise ConfigError(f"{path}.pretrained: expected path string")
        return ExtractorConfig(kind="pretrained", path=raw["pretrained"])
    if set(raw) == {"identity"}:
        return ExtractorConfig(kind="identity")
    return _build_section(ExtractorConfig, raw, path)


def run_config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    sections = {
        "network": NetworkConfig,
        "loss": LossConfig,
        "train": TrainConfig,
        "data": DataConfig,
        "extractor": ExtractorConfig,
    }
    unknown = set(raw) - set(sections)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for name, dc_type in sections.items():
        if name not in raw:
            continue
        if name == "extractor":
            kwargs[name] = _build_extractor(raw[name])
        else:
            kwargs[name] = _build_section(dc_type, raw[name], name)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}")
    return run_config_from_dict(raw)
