"""Run configuration: plain-text key=value files with '#' comments plus overrides."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

_SCHEMA = {
    "preset": (str, "tiny"),
    "r": (int, 2),
    "seed": (int, 0),
    "epochs": (int, 400),
    "steps": (int, 0),            # 0 = run out the epochs
    "batch_size": (int, 4),
    "lr": (float, 1e-4),
    "lr_halve_epochs": (int, 100),
    "weight_decay": (float, 1e-4),
    "precision": (str, "f32"),    # f32 | f64
    "data_dir": (str, "data"),
    "out_dir": (str, "out"),
    "samples": (int, 8),
    "side": (int, 96),
    "ellipses_min": (int, 3),
    "ellipses_max": (int, 8),
    "blur_sigma": (float, 1.5),
    "noise_sigma": (float, 0.0),
    "alpha": (float, 0.95),
    "lam": (float, 0.5),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str
    r: int
    seed: int
    epochs: int
    steps: int
    batch_size: int
    lr: float
    lr_halve_epochs: int
    weight_decay: float
    precision: str
    data_dir: str
    out_dir: str
    samples: int
    side: int
    ellipses_min: int
    ellipses_max: int
    blur_sigma: float
    noise_sigma: float
    alpha: float
    lam: float

    def echo(self, path):
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")


def _coerce(key, raw):
    if key not in _SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    typ, _ = _SCHEMA[key]
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def load_config(path=None, overrides=()):
    values = {k: default for k, (_, default) in _SCHEMA.items()}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key] = _coerce(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        values[key] = _coerce(key, raw)
    if values["precision"] not in ("f32", "f64"):
        raise ConfigError(f"precision must be f32 or f64, got {values['precision']!r}")
    return RunConfig(**values)
