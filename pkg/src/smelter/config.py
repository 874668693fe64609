"""Run configuration: flat ``key = value`` files with ``#`` comments."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # data
    manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    frame: int = 72
    crop: int = 64
    align: bool = True
    grayscale: bool = False
    channel_mean: str = "auto"
    input_scale: float = 0.015625  # 1/64; set 1 for raw 0..255 mean-subtracted inputs
    val_fraction: float = 0.1
    folds: int = 4
    # model
    topology: str = "mini"
    channels: str = "8,16,32,64"
    fc_width: int = 64
    classes: int = 2
    init: str = ""
    freeze: str = ""
    head: str = "auto"
    head_std: float = 1e-2
    # optimizer
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch: int = 64
    iterations: int = 1000
    patience: int = 2
    val_every: int = 100
    # output
    out: str = ""

    def channel_list(self):
        return tuple(int(c) for c in self.channels.split(",") if c.strip())

    def validate(self):
        if self.topology not in ("mini", "vgg16"):
            raise ConfigError(f"topology must be mini or vgg16, got {self.topology!r}")
        if self.crop > self.frame:
            raise ConfigError(f"crop {self.crop} larger than frame {self.frame}")
        for name in ("batch", "iterations", "val_every", "patience", "folds", "classes", "frame", "crop"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.input_scale <= 0:
            raise ConfigError("input_scale must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.channel_mean != "auto":
            parts = self.channel_mean.split(",")
            try:
                if len(parts) != 3:
                    raise ValueError
                [float(p) for p in parts]
            except ValueError:
                raise ConfigError(f"channel_mean must be 'auto' or three numbers, got {self.channel_mean!r}")
        return self

    # -- serialization --------------------------------------------------------------

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def to_text(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def digest(self):
        """SHA-256 prefix of the effective configuration."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def updated(self, **overrides):
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None}).validate()


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name, typ, raw):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ.__name__}") from None


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def parse_config(text, origin="<config>", base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    known = {f.name: _TYPES[f.type] for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(f"{origin}:{lineno}: {key}", known[key], raw)
    return dataclasses.replace(cfg, **values).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"), str(path))
    # relative paths inside a config resolve against the config's folder
    fixes = {}
    for key in ("manifest", "val_manifest", "test_manifest", "init", "out"):
        v = getattr(cfg, key)
        if v and not Path(v).is_absolute():
            fixes[key] = str((path.parent / v).resolve())
    return dataclasses.replace(cfg, **fixes)
