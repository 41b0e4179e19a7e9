"""Plain key=value run configuration with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every hyperparameter of a run; defaults follow the reference setup."""

    seed: int = 0
    mode: str = "multiset"          # set | multiset | list

    # scene generation
    canvas: int = 64
    classes: int = 10
    objects_min: int = 1
    objects_max: int = 4
    glyph_min: int = 13
    glyph_max: int = 32
    clutter_min: int = 2
    clutter_max: int = 6
    train_size: int = 6000
    test_size: int = 1000

    # architecture
    grid: int = 8
    channels: int = 64
    components: int = 5             # Gaussian mixture size K
    glimpses: int = 2               # controller location steps k
    meta_hidden: int = 128
    ctrl_hidden: int = 512
    loc_hidden: int = 64

    # optimization
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    value_weight: float = 0.5
    batch_size: int = 32
    epochs: int = 15
    max_steps: int = 6

    # extractor pretraining
    pretrain_size: int = 5000
    pretrain_holdout: int = 1000
    pretrain_epochs: int = 3
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 32

    def validate(self) -> "RunConfig":
        if self.mode not in ("set", "multiset", "list"):
            raise ConfigError(f"mode must be set/multiset/list, got '{self.mode}'")
        if self.canvas != 8 * self.grid:
            raise ConfigError(f"canvas {self.canvas} must be 8*grid (grid={self.grid}); "
                              "the extractor downsamples by 8")
        if not (1 <= self.classes <= 10):
            raise ConfigError(f"classes must be in [1, 10], got {self.classes}")
        if self.objects_min < 1 or self.objects_max < self.objects_min:
            raise ConfigError("invalid objects_min/objects_max")
        if self.max_steps < self.objects_max + 1:
            raise ConfigError("max_steps must cover objects_max + stop step")
        return self

    def resolved_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got '{raw}'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ConfigError(f"line {lineno}: unknown config key '{key}'")
            ftype = fields[key].type
            try:
                if ftype == "int":
                    values[key] = int(val)
                elif ftype == "float":
                    values[key] = float(val)
                else:
                    values[key] = val
            except ValueError as e:
                raise ConfigError(f"line {lineno}: bad value for '{key}': {e}") from e
        return cls(**values).validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())
