"""LPC formant tracking: autocorrelation LPC, Durand-Kerner roots, root geometry."""
import numpy as np

from .. import _kernels
from ..config import DEFAULT_CONFIG, AnalysisConfig
from ..signal_core import Waveform
from ._framing import centered_segments, frame_centers


def autocorrelation(frames, max_lag):
    """Biased autocorrelation rows r[:, 0..max_lag] of each frame."""
    frames = np.asarray(frames, dtype=np.float64)
    N = frames.shape[1]
    return np.stack([np.einsum("ij,ij->i", frames[:, : N - k], frames[:, k:]) for k in range(max_lag + 1)], axis=1)


def lpc(frames, order):
    """Autocorrelation-method LPC. Returns (a, ok); a[:, 0] == 1."""
    r = autocorrelation(frames, order)
    a, _, ok = _kernels.levinson(np.ascontiguousarray(r), order)
    return a, ok


def polynomial_roots(coeffs, max_iter=100, tol=1e-10):
    """Roots of monic polynomials (rows, highest power first) by Durand-Kerner."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.complex128))
    c = np.ascontiguousarray(c / c[:, :1])
    roots, _ = _kernels.durand_kerner(c, max_iter, tol)
    return roots


def root_geometry(roots, fs):
    """Frequency (Hz) and 3 dB bandwidth (Hz) of z-plane roots."""
    roots = np.asarray(roots)
    freq = np.angle(roots) * fs / (2.0 * np.pi)
    with np.errstate(divide="ignore"):
        bw = -np.log(np.abs(roots)) * fs / np.pi
    return freq, bw


def select_formants(roots, fs, cfg: AnalysisConfig = DEFAULT_CONFIG, n=3):
    """Lowest ``n`` plausible formants of one root set: (freqs, bandwidths), 0-filled."""
    roots = roots[roots.imag > 0]
    freq, bw = root_geometry(roots, fs)
    keep = (freq >= cfg.formant_fmin) & (freq <= cfg.formant_fmax) & (bw < cfg.formant_bw_max) & (bw > 0)
    freq, bw = freq[keep], bw[keep]
    order = np.argsort(freq, kind="stable")[:n]
    f = np.zeros(n)
    b = np.zeros(n)
    f[: order.size] = freq[order]
    b[: order.size] = bw[order]
    return f, b


def extract_formants(w: Waveform, cfg: AnalysisConfig = DEFAULT_CONFIG) -> np.ndarray:
    """(T, 6) matrix of F1, F2, F3, B1, B2, B3 in Hz; missing formants are 0."""
    fs = w.sample_rate
    x = w.samples
    emph = np.empty_like(x)
    if x.size:
        emph[0] = x[0]
        emph[1:] = x[1:] - cfg.pre_emphasis * x[:-1]
    centers = frame_centers(len(w))
    frames = centered_segments(emph, centers, cfg.formant_frame) * np.hamming(cfg.formant_frame)
    a, ok = lpc(frames, cfg.lpc_order)
    out = np.zeros((centers.shape[0], 6))
    rows = np.flatnonzero(ok)
    if rows.size == 0:
        return out
    roots = polynomial_roots(a[rows], cfg.dk_max_iter, cfg.dk_tol)
    for i, t in enumerate(rows):
        f, b = select_formants(roots[i], fs, cfg)
        out[t, :3] = f
        out[t, 3:] = b
    return out
