"""Run configuration: desk/paper profiles, flat key=value config files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

PROFILES = {
    # single-CPU runnable in minutes while exercising every code path
    "desk": dict(input_size=64, channels=64, train_size=128, test_size=32, iters=2000),
    "paper": dict(input_size=256, channels=128, train_size=128, test_size=32, iters=150000),
}


@dataclass
class RunConfig:
    profile: str = "desk"
    input_size: int = 64
    channels: int = 64
    t: int = 4
    heads: int = 4
    lr: float = 1e-4
    batch: int = 6
    iters: int = 2000
    seed: int = 7
    train_size: int = 128
    test_size: int = 32
    data_dir: str = ""
    out_dir: str = "out"
    progressive: bool = True
    baseline_msmmf: bool = False
    checkpoint_every: int = 500
    dump_maps: bool = False

    def validate(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch < 1 or self.iters < 0:
            raise ConfigError("batch must be >= 1 and iters >= 0")
        if self.input_size % 16:
            raise ConfigError(f"input_size must be divisible by 16, got {self.input_size}")
        return self


def apply_profile(cfg, profile):
    cfg.profile = profile
    for key, value in PROFILES[profile].items():
        setattr(cfg, key, value)
    return cfg


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, value):
    typ = _FIELDS[key]
    if typ == "bool":
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {value!r}")
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {value!r} as {typ}")
    return value


def parse_config_file(path, base=None):
    """Flat key=value UTF-8 file; '#' comments; unknown keys are errors."""
    cfg = base or RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key == "profile":
                apply_profile(cfg, _coerce(key, value) if value in PROFILES else value)
                if value not in PROFILES:
                    raise ConfigError(f"{path}:{lineno}: unknown profile {value!r}")
            else:
                setattr(cfg, key, _coerce(key, value))
    return cfg
