"""Ground-truth extraction of the 25 temporal acoustic parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import DEFAULT_CONFIG, AnalysisConfig
from ..errors import DimensionError
from ..signal_core import DEFAULT_STFT, SAMPLE_RATE, Waveform, stft, to_pipeline_rate
from .formants import extract_formants
from .pitch import PitchTrack, extract_hnr, extract_jitter_shimmer, extract_pitch
from .spectral import extract_loudness, extract_spectral_balance
from .temporal import extract_temporal_stats, voiced_segment_rate

PARAMETER_NAMES = (
    "pitch", "jitter",
    "f1_freq", "f2_freq", "f3_freq", "f1_bw", "f2_bw", "f3_bw",
    "shimmer", "loudness", "hnr",
    "alpha_ratio", "hammarberg", "slope_0_500", "slope_500_1500",
    "f1_rel_energy", "f2_rel_energy", "f3_rel_energy", "h1_h2", "h1_a3",
    "loudness_peak_rate", "voiced_len_mean", "voiced_len_std",
    "unvoiced_len_mean", "unvoiced_len_std",
)
N_PARAMS = len(PARAMETER_NAMES)
STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True, eq=False)
class TapMatrix:
    data: np.ndarray
    frame_hop: int = DEFAULT_STFT.hop
    sample_rate: int = SAMPLE_RATE
    standardized: bool = False
    stats: StandardizationStats | None = field(default=None, compare=False)

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != N_PARAMS:
            raise DimensionError(f"TAP matrix must be T x {N_PARAMS}, got {d.shape}")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape


def as_array(m) -> np.ndarray:
    return m.data if isinstance(m, TapMatrix) else np.asarray(m, dtype=np.float64)


def extract_all(w: Waveform, cfg: AnalysisConfig = DEFAULT_CONFIG) -> TapMatrix:
    """Raw (unstandardised) T x 25 matrix on the default 10 ms STFT grid."""
    w = to_pipeline_rate(w)
    spec = stft(w, DEFAULT_STFT)
    pitch = extract_pitch(w, cfg)
    jitter, shimmer = extract_jitter_shimmer(w, pitch, cfg)
    formants = extract_formants(w, cfg)
    loud = extract_loudness(spec, cfg)
    hnr = extract_hnr(w, pitch, cfg)
    balance = extract_spectral_balance(spec, pitch, formants)
    temporal = extract_temporal_stats(pitch, loud, cfg)

    T = spec.n_frames
    out = np.empty((T, N_PARAMS))
    out[:, 0] = pitch.f0
    out[:, 1] = jitter
    out[:, 2:8] = formants
    out[:, 8] = shimmer
    out[:, 9] = loud
    out[:, 10] = hnr
    out[:, 11:15] = balance[:, :4]
    out[:, 15:18] = balance[:, 4:7]
    out[:, 18:20] = balance[:, 7:9]
    out[:, 20:25] = temporal
    return TapMatrix(out, DEFAULT_STFT.hop, SAMPLE_RATE, standardized=False)


def standardize(m: TapMatrix) -> tuple[TapMatrix, StandardizationStats]:
    """Per-column z-score over time, population std. Columns whose std is below
    1e-8 become all-zero and report std 0."""
    x = m.data
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flat = std < STD_FLOOR
    std = np.where(flat, 0.0, std)
    z = np.where(flat, 0.0, (x - mean) / np.where(flat, 1.0, std))
    stats = StandardizationStats(mean, std)
    return TapMatrix(z, m.frame_hop, m.sample_rate, True, stats), stats


def apply_standardization(m: TapMatrix, stats: StandardizationStats) -> TapMatrix:
    """z-score ``m`` with someone else's statistics (e.g. the clean reference's),
    so several matrices share one standardized space."""
    x = m.data
    flat = stats.std < STD_FLOOR
    z = np.where(flat, 0.0, (x - stats.mean) / np.where(flat, 1.0, stats.std))
    return TapMatrix(z, m.frame_hop, m.sample_rate, True, stats)


def destandardize(m: TapMatrix, stats: StandardizationStats) -> TapMatrix:
    x = m.data * stats.std + stats.mean
    return TapMatrix(x, m.frame_hop, m.sample_rate, False)


__all__ = [
    "PARAMETER_NAMES", "N_PARAMS", "TapMatrix", "StandardizationStats", "PitchTrack",
    "extract_all", "standardize", "apply_standardization", "destandardize", "extract_pitch", "extract_jitter_shimmer",
    "extract_hnr", "extract_formants", "extract_loudness", "extract_spectral_balance",
    "extract_temporal_stats", "voiced_segment_rate",
]
