"""Pitch tracking (YIN), jitter/shimmer from cycle peaks, and HNR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..config import DEFAULT_CONFIG, AnalysisConfig
from ..signal_core import SAMPLE_RATE, Waveform
from ._framing import centered_segments, frame_centers

HNR_CLAMP_DB = 40.0


@dataclass(frozen=True, eq=False)
class PitchTrack:
    f0: np.ndarray          # Hz, 0 where unvoiced
    voiced: np.ndarray      # bool
    aperiodicity: np.ndarray  # CMNDF value at the chosen lag, in [0, 1]
    lag: np.ndarray         # fractional period in samples, 0 where unvoiced

    def __len__(self):
        return self.f0.shape[0]


def _lag_range(cfg, fs):
    tau_min = max(2, int(np.floor(fs / cfg.f0_max)))
    tau_max = int(np.ceil(fs / cfg.f0_min))
    return tau_min, tau_max


def cmndf(d):
    """Cumulative-mean-normalised difference, d'(0) = 1."""
    d = np.asarray(d, dtype=np.float64)
    out = np.ones_like(d)
    taus = np.arange(1, d.shape[-1])
    csum = np.cumsum(d[..., 1:], axis=-1)
    good = csum > 0
    ratio = np.where(good, d[..., 1:] * taus / np.where(good, csum, 1.0), 1.0)
    out[..., 1:] = ratio
    return out


def _parabolic(ym1, y0, yp1):
    """Vertex offset and value of the parabola through three equispaced points."""
    den = ym1 - 2.0 * y0 + yp1
    if den == 0.0:
        return 0.0, y0
    off = 0.5 * (ym1 - yp1) / den
    off = min(max(off, -0.5), 0.5)
    return off, y0 - 0.25 * (ym1 - yp1) * off


def _pick_lag(dp, tau_min, tau_max, thr):
    """YIN absolute-threshold lag choice on one CMNDF row."""
    window = dp[tau_min : tau_max + 1]
    below = np.flatnonzero(window < thr)
    if below.size:
        tau = tau_min + int(below[0])
        while tau + 1 <= tau_max and dp[tau + 1] < dp[tau]:
            tau += 1
    else:
        tau = tau_min + int(np.argmin(window))
    return tau


def extract_pitch(w: Waveform, cfg: AnalysisConfig = DEFAULT_CONFIG) -> PitchTrack:
    fs = w.sample_rate
    tau_min, tau_max = _lag_range(cfg, fs)
    W = cfg.yin_window
    centers = frame_centers(len(w))
    # one extra lag so the parabola around tau_max is defined
    segs = centered_segments(w.samples, centers, W + tau_max + 1)
    d = _kernels.yin_difference(np.ascontiguousarray(segs), W, tau_max + 1)
    dp = cmndf(d)

    T = centers.shape[0]
    f0 = np.zeros(T)
    lag = np.zeros(T)
    ap = np.ones(T)
    voiced = np.zeros(T, dtype=bool)
    for t in range(T):
        row = dp[t]
        tau = _pick_lag(row, tau_min, tau_max, cfg.voicing_threshold)
        off, val = _parabolic(row[tau - 1], row[tau], row[tau + 1])
        a = float(np.clip(min(val, row[tau]), 0.0, 1.0))
        ap[t] = a
        period = tau + off
        hz = fs / period
        if a < cfg.voicing_threshold and cfg.f0_min <= hz <= cfg.f0_max:
            voiced[t] = True
            f0[t] = hz
            lag[t] = period
    return PitchTrack(f0, voiced, ap, lag)


# ---------------------------------------------------------------------------

def _cycle_peaks(seg, period):
    """Peak positions/values of successive cycles, searched period by period."""
    n = seg.shape[0]
    p = int(round(period))
    if p < 2 or n < 2 * p:
        return np.empty(0), np.empty(0)
    lo_w, hi_w = int(np.floor(0.75 * period)), int(np.ceil(1.25 * period))
    first = int(np.argmax(seg[:p]))
    idx = [first]
    while True:
        lo, hi = idx[-1] + lo_w, min(idx[-1] + hi_w, n - 1)
        if lo >= n - 1 or hi <= lo:
            break
        idx.append(lo + int(np.argmax(seg[lo : hi + 1])))
    pos, amp = [], []
    for i in idx:
        if not 0 < i < n - 1:
            continue  # a clipped context edge is not a cycle peak
        off, val = _parabolic(seg[i - 1], seg[i], seg[i + 1])
        pos.append(i + off)
        amp.append(val)
    return np.asarray(pos), np.asarray(amp)


def extract_jitter_shimmer(w: Waveform, pitch: PitchTrack, cfg: AnalysisConfig = DEFAULT_CONFIG):
    """Local jitter and shimmer per frame over a centred cycle context.

    Returns two length-T arrays; both are 0 on unvoiced frames and on frames
    with fewer than ``cfg.min_cycles`` complete cycles in context.
    """
    T = len(pitch)
    jitter = np.zeros(T)
    shimmer = np.zeros(T)
    ctx = int(round(cfg.cycle_context_ms * 1e-3 * w.sample_rate))
    centers = frame_centers(len(w))[:T]
    vidx = np.flatnonzero(pitch.voiced)
    if vidx.size == 0:
        return jitter, shimmer
    x = w.samples
    for t in vidx:
        # context clipped to the signal; zero padding would fake cycles
        lo = max(0, int(centers[t]) - ctx // 2)
        hi = min(len(x), int(centers[t]) - ctx // 2 + ctx)
        pos, amp = _cycle_peaks(x[lo:hi], pitch.lag[t])
        periods = np.diff(pos)
        if periods.shape[0] < cfg.min_cycles:
            continue
        mp = periods.mean()
        if mp > 0:
            jitter[t] = np.mean(np.abs(np.diff(periods))) / mp
        ma = amp.mean()
        if ma > 0:
            shimmer[t] = np.mean(np.abs(np.diff(amp))) / ma
    return jitter, shimmer


def normalized_autocorr(seg, W, lag, valid=None):
    """r(lag) = <x[:W], x[lag:lag+W]> / sqrt(|x[:W]|^2 |x[lag:lag+W]|^2).

    With ``valid`` given, only sample pairs lying inside the signal count.
    """
    a = seg[:W]
    b = seg[lag : lag + W]
    if valid is not None:
        m = valid[:W] * valid[lag : lag + W]
        a = a * m
        b = b * m
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(np.dot(a, b) / den) if den > 0 else 0.0


def hnr_from_r(r):
    if r <= 0.0:
        return -HNR_CLAMP_DB
    if r >= 1.0:
        return HNR_CLAMP_DB
    return float(np.clip(10.0 * np.log10(r / (1.0 - r)), -HNR_CLAMP_DB, HNR_CLAMP_DB))


def extract_hnr(w: Waveform, pitch: PitchTrack, cfg: AnalysisConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Harmonics-to-noise ratio in dB from the normalised autocorrelation peak
    at the pitch lag (parabolically refined); -40 dB on unvoiced frames."""
    T = len(pitch)
    out = np.full(T, -HNR_CLAMP_DB)
    W = cfg.yin_window
    centers = frame_centers(len(w))[:T]
    vidx = np.flatnonzero(pitch.voiced)
    if vidx.size == 0:
        return out
    _, tau_max = _lag_range(cfg, w.sample_rate)
    L, off = W + tau_max + 2, (W + tau_max + 1) // 2
    segs = centered_segments(w.samples, centers[vidx], L, offset=off)
    valid = centered_segments(np.ones(len(w)), centers[vidx], L, offset=off)
    for row, t in enumerate(vidx):
        k = int(round(pitch.lag[t]))
        # refine to the local r maximum within +-2 lags of the YIN period
        rs = [normalized_autocorr(segs[row], W, k + j, valid[row]) if k + j >= 1 else -1.0
              for j in range(-3, 4)]
        i = 1 + int(np.argmax(rs[1:-1]))
        _, peak = _parabolic(rs[i - 1], rs[i], rs[i + 1])
        out[t] = hnr_from_r(max(peak, rs[i]))
    return out
