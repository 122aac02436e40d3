"""Loudness and spectral-balance descriptors computed on the STFT grid."""
import numpy as np

from ..config import DEFAULT_CONFIG, AnalysisConfig
from ..signal_core import ComplexSpectrogram

POWER_FLOOR = 1e-12


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bins, fs, n_fft, n_mel=26, fmin=20.0, fmax=8000.0):
    """(n_mel, n_bins) triangular filters with unit peak, HTK mel spacing."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mel + 2))
    f = np.arange(n_bins) * fs / n_fft
    fb = np.zeros((n_mel, n_bins))
    for b in range(n_mel):
        lo, c, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (f - lo) / (c - lo)
        down = (hi - f) / (hi - c)
        fb[b] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def power_spectrum(spec: ComplexSpectrogram) -> np.ndarray:
    d = spec.data
    return d.real ** 2 + d.imag ** 2


def band_powers(spec: ComplexSpectrogram, cfg: AnalysisConfig = DEFAULT_CONFIG) -> np.ndarray:
    fb = mel_filterbank(spec.n_bins, spec.sample_rate, spec.config.n_fft,
                        cfg.n_mel, cfg.mel_fmin, cfg.mel_fmax)
    return power_spectrum(spec) @ fb.T


def extract_loudness(spec: ComplexSpectrogram, cfg: AnalysisConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Sum over mel bands of compressed band power, (band power) ** 0.33."""
    return np.sum(band_powers(spec, cfg) ** cfg.loudness_exponent, axis=1)


def _db(p):
    return 10.0 * np.log10(np.maximum(p, POWER_FLOOR))


def band_mask(freqs, lo, hi, include_hi=False):
    return (freqs >= lo) & ((freqs <= hi) if include_hi else (freqs < hi))


def regression_slope(x, Y):
    """Least-squares slope of each row of Y against x."""
    xc = x - x.mean()
    return (Y - Y.mean(axis=1, keepdims=True)) @ xc / np.dot(xc, xc)


def peak_db(db_row, freqs, center, half_width):
    """Parabolically interpolated dB peak among bins within center +- half_width.

    The search always includes the bin nearest ``center``.
    """
    df = freqs[1] - freqs[0]
    hw = max(half_width, 0.5 * df)
    idx = np.flatnonzero(np.abs(freqs - center) <= hw)
    if idx.size == 0:
        idx = np.array([int(np.argmin(np.abs(freqs - center)))])
    i = int(idx[np.argmax(db_row[idx])])
    if 0 < i < db_row.shape[0] - 1:
        a, b, c = db_row[i - 1], db_row[i], db_row[i + 1]
        den = a - 2.0 * b + c
        if den < 0.0:
            off = min(max(0.5 * (a - c) / den, -0.5), 0.5)
            return float(b - 0.25 * (a - c) * off)
    return float(db_row[i])


def extract_spectral_balance(spec: ComplexSpectrogram, pitch, formants) -> np.ndarray:
    """(T, 9) matrix.

    Columns: alpha ratio, Hammarberg index, slope 0-500 Hz, slope 500-1500 Hz
    (dB/Hz), F1/F2/F3 relative energy, H1-H2, H1-A3 (all dB). The last five
    are 0 on unvoiced frames and wherever the needed formant is missing.
    """
    P = power_spectrum(spec)
    T = P.shape[0]
    freqs = spec.freqs()
    db = _db(P)
    out = np.zeros((T, 9))

    lo = band_mask(freqs, 50.0, 1000.0)
    hi = band_mask(freqs, 1000.0, 5000.0, include_hi=True)
    out[:, 0] = _db(P[:, lo].sum(axis=1)) - _db(P[:, hi].sum(axis=1))

    a = band_mask(freqs, 0.0, 2000.0, include_hi=True)
    b = (freqs > 2000.0) & (freqs <= 5000.0)
    out[:, 1] = db[:, a].max(axis=1) - db[:, b].max(axis=1)

    for col, (f_lo, f_hi) in ((2, (0.0, 500.0)), (3, (500.0, 1500.0))):
        m = band_mask(freqs, f_lo, f_hi, include_hi=True)
        out[:, col] = regression_slope(freqs[m], db[:, m])

    f0 = pitch.f0
    for t in np.flatnonzero(pitch.voiced):
        row = db[t]
        hw = 0.5 * f0[t]
        h1 = peak_db(row, freqs, f0[t], hw)
        for j in range(3):
            fj = formants[t, j]
            if fj > 0:
                k = max(1, int(round(fj / f0[t])))
                out[t, 4 + j] = peak_db(row, freqs, k * f0[t], hw) - h1
        out[t, 7] = h1 - peak_db(row, freqs, 2.0 * f0[t], hw)
        f3 = formants[t, 2]
        if f3 > 0:
            ks = np.arange(np.ceil((f3 - 200.0) / f0[t]), np.floor((f3 + 200.0) / f0[t]) + 1)
            ks = ks[ks >= 1]
            if ks.size:
                a3 = max(peak_db(row, freqs, k * f0[t], hw) for k in ks)
            else:
                a3 = peak_db(row, freqs, f3, 200.0)
            out[t, 8] = h1 - a3
    return out
