"""Network/training configuration and the plain-text key-value config format.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Keys are the field names of :class:`NetworkConfig`, :class:`TrainSchedule`
and :class:`DataConfig`. Sequences are comma-separated, booleans accept
true/false/yes/no/1/0.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    height: int = 32
    width: int = 32
    levels: int = 5
    enc_widths: tuple[int, ...] = (16, 32, 32, 32)
    window: int = 5
    global_hop: bool = True
    local_hop: bool = True
    pos_enc: bool = False
    trimap_emb: bool = False
    pe_radius: int = 7
    block_type: str = "hop"
    skips: bool = True
    seed: int = 0

    def validate(self) -> "NetworkConfig":
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be a positive odd integer, got {self.window}")
        if len(self.enc_widths) != self.levels - 1:
            raise ConfigError(f"enc_widths needs {self.levels - 1} entries for {self.levels} levels, got {len(self.enc_widths)}")
        if any(w < 1 for w in self.enc_widths):
            raise ConfigError("channel widths must be positive")
        if self.height < 1 or self.width < 1:
            raise ConfigError("input size must be positive")
        if self.pe_radius < 1:
            raise ConfigError("pe_radius must be positive")
        if self.block_type not in ("hop", "self"):
            raise ConfigError(f"block_type must be 'hop' or 'self', got {self.block_type!r}")
        return self

    @property
    def downsample(self) -> int:
        return 2 ** (self.levels - 1)

    @property
    def num_local_blocks(self) -> int:
        return self.levels - 2 if self.local_hop else 0


@dataclass
class TrainSchedule:
    base_lr: float = 3e-3
    warmup_steps: int = 25
    total_steps: int = 500
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: str = "none"  # none | fixed | random
    augment_method: str = "cubic"

    def validate(self) -> "TrainSchedule":
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.total_steps and self.warmup_steps >= self.total_steps:
            raise ConfigError("warmup_steps must be smaller than total_steps")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.base_lr < 0:
            raise ConfigError("base_lr must be non-negative")
        if self.augment not in ("none", "fixed", "random"):
            raise ConfigError(f"augment must be none, fixed or random, got {self.augment!r}")
        return self


@dataclass
class DataConfig:
    samples: int = 200
    sample_size: int = 32
    data_seed: int = 0


@dataclass
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    sections = [cfg.network, cfg.schedule, cfg.data]
    owners = {f.name: obj for obj in sections for f in fields(obj)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        obj = owners.get(key)
        if obj is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(obj, key, _coerce(value, getattr(obj, key), key))
    cfg.network.validate()
    cfg.schedule.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for obj in (cfg.network, cfg.schedule, cfg.data):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def network_from_dict(d: dict) -> NetworkConfig:
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    return NetworkConfig(**kw).validate()


def network_to_dict(cfg: NetworkConfig) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(cfg).items()}
