"""Sliding-window temporal functionals turned into per-frame time series."""
import numpy as np

from ..config import DEFAULT_CONFIG, AnalysisConfig
from ..signal_core import DEFAULT_STFT, SAMPLE_RATE


def run_lengths(mask):
    """(values, lengths) of maximal constant runs in a boolean sequence."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return np.empty(0, dtype=bool), np.empty(0, dtype=np.int64)
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    starts = np.r_[0, change]
    ends = np.r_[change, mask.size]
    return mask[starts], ends - starts


def _class_lengths(vals, lens, which):
    """Lengths of runs of one class; runs clipped by the window edges are
    dropped when that class also has complete runs inside the window."""
    sel = vals == which
    interior = sel.copy()
    if interior.size:
        interior[0] = interior[-1] = False
    return lens[interior] if interior.any() else lens[sel]


def _mean_std(x):
    if x.size == 0:
        return 0.0, 0.0
    return float(x.mean()), float(x.std())


def count_peaks(x, factor):
    """Local maxima strictly above the left neighbour, at least the right one,
    and above mean + factor * std of ``x``."""
    if x.shape[0] < 3:
        return 0
    thr = x.mean() + factor * x.std()
    mid = x[1:-1]
    return int(np.count_nonzero((mid > x[:-2]) & (mid >= x[2:]) & (mid > thr)))


def _half_window(cfg, frame_s):
    return int(round(0.5 * cfg.temporal_window_s / frame_s))


def extract_temporal_stats(pitch, loudness, cfg: AnalysisConfig = DEFAULT_CONFIG,
                           frame_s=DEFAULT_STFT.hop / SAMPLE_RATE) -> np.ndarray:
    """(T, 5): loudness-peak rate (1/s), voiced length mean/std, unvoiced
    length mean/std (s), over a centred window truncated at the edges."""
    voiced = np.asarray(pitch.voiced, dtype=bool)
    loud = np.asarray(loudness, dtype=np.float64)
    T = voiced.shape[0]
    half = _half_window(cfg, frame_s)
    out = np.zeros((T, 5))
    for t in range(T):
        lo, hi = max(0, t - half), min(T, t + half + 1)
        dur = (hi - lo) * frame_s
        out[t, 0] = count_peaks(loud[lo:hi], cfg.peak_std_factor) / dur
        vals, lens = run_lengths(voiced[lo:hi])
        out[t, 1], out[t, 2] = _mean_std(_class_lengths(vals, lens, True) * frame_s)
        out[t, 3], out[t, 4] = _mean_std(_class_lengths(vals, lens, False) * frame_s)
    return out


def voiced_segment_rate(voiced, cfg: AnalysisConfig = DEFAULT_CONFIG,
                        frame_s=DEFAULT_STFT.hop / SAMPLE_RATE) -> np.ndarray:
    """Voiced segments per second in the same sliding window.

    Not one of the 25 matrix columns; kept for analysis.
    """
    voiced = np.asarray(voiced, dtype=bool)
    T = voiced.shape[0]
    half = _half_window(cfg, frame_s)
    out = np.zeros(T)
    for t in range(T):
        lo, hi = max(0, t - half), min(T, t + half + 1)
        vals, _ = run_lengths(voiced[lo:hi])
        out[t] = np.count_nonzero(vals) / ((hi - lo) * frame_s)
    return out
