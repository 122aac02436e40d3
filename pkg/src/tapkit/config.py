"""Analysis configuration: thresholds and window sizes for TAP extraction.

The on-disk form is a plain ``key = value`` text file; ``#`` starts a comment.
Keys not present keep their defaults.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class AnalysisConfig:
    # pitch
    f0_min: float = 60.0
    f0_max: float = 500.0
    voicing_threshold: float = 0.30
    yin_window: int = 512
    # jitter / shimmer
    cycle_context_ms: float = 100.0
    min_cycles: int = 3
    # formants
    lpc_order: int = 16
    pre_emphasis: float = 0.97
    formant_frame: int = 400
    formant_fmin: float = 90.0
    formant_fmax: float = 5500.0
    formant_bw_max: float = 1000.0
    dk_max_iter: int = 100
    dk_tol: float = 1e-10
    # loudness
    n_mel: int = 26
    mel_fmin: float = 20.0
    mel_fmax: float = 8000.0
    loudness_exponent: float = 0.33
    # temporal functionals
    temporal_window_s: float = 1.0
    peak_std_factor: float = 0.25

    def __post_init__(self):
        if not 0 < self.f0_min < self.f0_max:
            raise ConfigError("need 0 < f0_min < f0_max")
        if not 0 < self.voicing_threshold <= 1:
            raise ConfigError("voicing_threshold must be in (0, 1]")
        if self.lpc_order < 2 or self.n_mel < 1 or self.yin_window < 16:
            raise ConfigError("lpc_order, n_mel or yin_window out of range")


DEFAULT_CONFIG = AnalysisConfig()


def parse_config(text: str, base: AnalysisConfig = DEFAULT_CONFIG) -> AnalysisConfig:
    types = {f.name: f.type for f in fields(AnalysisConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = int(value) if types[key] in ("int", int) else float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return replace(base, **updates)


def load_config(path) -> AnalysisConfig:
    if path is None:
        return DEFAULT_CONFIG
    return parse_config(Path(path).read_text())
