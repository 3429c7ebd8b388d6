"""Nyquist and QVNS PSD models and the ratio-to-Boltzmann conversion.

Physical constants are inputs, never module constants, so a change of
recommended values does not touch code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, DomainError

__all__ = [
    "PhysicalConfig",
    "josephson_constant",
    "von_klitzing_constant",
    "resistor_psd",
    "qvns_psd",
    "boltzmann_from_ratio",
    "load_physical_config",
]


@dataclass(frozen=True)
class PhysicalConfig:
    h: float
    e: float
    t_w: float
    x_r: float
    f_s: float
    m: float
    d_amp: float
    n_j: int

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{f.name} must be a positive finite number, got {v!r}")
        if int(self.n_j) != self.n_j:
            raise ConfigError(f"n_j must be integral, got {self.n_j!r}")
        object.__setattr__(self, "n_j", int(self.n_j))


def josephson_constant(cfg: PhysicalConfig) -> float:
    return 2.0 * cfg.e / cfg.h


def von_klitzing_constant(cfg: PhysicalConfig) -> float:
    return cfg.h / cfg.e**2


def resistor_psd(k: float, cfg: PhysicalConfig) -> float:
    """Thermal noise PSD ``4 k T_W X_R R_K`` of the sense resistor."""
    return 4.0 * k * cfg.t_w * cfg.x_r * von_klitzing_constant(cfg)


def qvns_psd(cfg: PhysicalConfig) -> float:
    """Synthesized noise PSD ``D^2 N_J^2 f_s M / K_J^2``."""
    kj = josephson_constant(cfg)
    return cfg.d_amp**2 * cfg.n_j**2 * cfg.f_s * cfg.m / kj**2


def boltzmann_from_ratio(cfg: PhysicalConfig, ratio: float, amplitude_power: int = 1) -> float:
    """Boltzmann constant from the resistor/QVNS PSD ratio.

    Evaluates ``h D^p N_J^2 f_s M ratio / (16 T_W X_R)``.  The published
    conversion has ``p = 1``; inverting :func:`resistor_psd` over
    :func:`qvns_psd` exactly requires ``p = 2``.  The two agree whenever
    ``D = 1``.
    """
    if not ratio > 0:
        raise DomainError(f"ratio must be positive, got {ratio!r}")
    if amplitude_power not in (1, 2):
        raise ConfigError("amplitude_power must be 1 or 2")
    return (
        cfg.h * cfg.d_amp**amplitude_power * cfg.n_j**2 * cfg.f_s * cfg.m * ratio
        / (16.0 * cfg.t_w * cfg.x_r)
    )


def load_physical_config(path) -> PhysicalConfig:
    """Read ``key = value`` lines (``#`` comments allowed) into a config."""
    names = {f.name for f in fields(PhysicalConfig)}
    values: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            key, _, val = line.partition(":")
        key = key.strip()
        if key not in names:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {val.strip()!r}") from None
    absent = sorted(names - set(values))
    if absent:
        raise ConfigError(f"{path}: missing key(s) {absent}")
    return PhysicalConfig(**values)
