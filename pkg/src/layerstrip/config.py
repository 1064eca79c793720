"""Run configuration in a flat ``key = value`` text format.

Blank lines and ``#`` comments are ignored.  Tuples are written as
comma-separated numbers.  Unknown keys are rejected so that a typo never
silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np


class ConfigError(ValueError):
    pass


FORMAT_VERSIONS = {"config": 1, "field": 1, "measurements": 1, "bundle": 1}


@dataclass(frozen=True)
class RunConfig:
    # geometry, cm
    omega: tuple = (5.0, 15.0, 5.0, 10.0)
    omega0: tuple = (0.0, 20.0, 0.0, 15.0)
    omega_prime: tuple = (5.0, 15.0, 5.0, 8.0)
    forward_nx: int = 130
    forward_nz: int = 93
    points_vertical: int = 65
    points_horizontal: int = 31
    refine_x: int = 6
    refine_z: int = 1
    # medium
    D: float = 0.02
    mu_background: float = 0.1
    # sources
    source_first: float = 0.0
    source_step: float = 0.625
    source_count: int = 5
    z_line: float = 10.0
    # data
    noise: float = 0.02
    seed: int = 0
    denoise_degree: int = 8
    # tolerances
    eps: float = 1e-5
    residual: float = 1e-10
    # tail
    gamma: float = 1.05
    max_accel: int = 300
    exponent_cap: float = 50.0
    a_min_factor: float = 0.1
    relaxed: bool = True
    relative_lambda: bool = True
    g_sources: int = 3
    g_selection: str = "first"
    # layer stripping
    max_inner: int = 100
    recovery_cells: tuple = (30, 15)
    recovery_unknown: str = "au"
    # phantom
    example: int = 1
    centers: tuple = (7.0, 7.0, 13.0, 7.0)
    radii: Optional[tuple] = None       # None: (1, 1), or (1, 0.6) for example 3
    peak: float = 0.3
    texture: float = 0.1
    phantom_seed: int = 0

    def __post_init__(self):
        if not self.D > 0 or not self.mu_background > 0:
            raise ConfigError("D and mu_background must be positive")
        if self.source_count < 2:
            raise ConfigError("need at least two sources")
        if not self.source_step > 0:
            raise ConfigError("source_step must be positive")
        if self.noise < 0:
            raise ConfigError("noise level must be non-negative")
        if not self.eps > 0 or not self.gamma > 1:
            raise ConfigError("eps must be positive and gamma above 1")
        if self.residual != 1e-10:
            raise ConfigError("the solver residual tolerance is fixed at 1e-10")
        if self.example not in (0, 1, 2, 3):
            raise ConfigError(f"unknown example {self.example}")
        if len(self.centers) % 2:
            raise ConfigError("centers must be x,z pairs")
        if self.g_selection not in ("first", "last"):
            raise ConfigError("g_selection must be 'first' or 'last'")
        if self.recovery_unknown not in ("au", "a"):
            raise ConfigError("recovery_unknown must be 'au' or 'a'")
        if self.g_sources > self.source_count:
            raise ConfigError("g_sources exceeds the number of sources")
        for name in ("omega", "omega0", "omega_prime"):
            r = getattr(self, name)
            if len(r) != 4 or not (r[0] < r[1] and r[2] < r[3]):
                raise ConfigError(f"{name} must be x_min,x_max,z_min,z_max with min < max")

    # derived quantities
    @property
    def a_background(self) -> float:
        return self.mu_background / self.D

    @property
    def k(self) -> float:
        return float(np.sqrt(self.a_background))

    @property
    def a_min(self) -> float:
        return self.a_min_factor * self.a_background

    @property
    def center_pairs(self) -> tuple:
        c = self.centers
        return tuple((c[i], c[i + 1]) for i in range(0, len(c), 2))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def overrides(self) -> dict:
        base = RunConfig()
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) != getattr(base, f.name)}


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


_TYPES = {f.name: f for f in fields(RunConfig)}


def _parse_value(name, text):
    default = _TYPES[name].default
    text = text.strip()
    try:
        if name == "radii":
            if text.lower() == "none":
                return None
            return tuple(float(t) for t in text.split(","))
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            kind = int if all(isinstance(x, int) for x in default) else float
            return tuple(kind(t) for t in text.split(","))
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val)
    base = base or RunConfig()
    return dataclasses.replace(base, **values)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
