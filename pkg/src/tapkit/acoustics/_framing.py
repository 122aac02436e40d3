import numpy as np

from ..signal_core import DEFAULT_STFT, n_frames_for


def frame_centers(n_samples, hop=DEFAULT_STFT.hop, cfg=DEFAULT_STFT):
    """Sample index at the centre of each analysis frame (same grid as stft)."""
    T = n_frames_for(n_samples, cfg)
    return np.arange(T) * hop


def centered_segments(x, centers, length, offset=None):
    """(T, length) array; row t starts at centers[t] - offset, zero outside x."""
    x = np.asarray(x, dtype=np.float64)
    if offset is None:
        offset = length // 2
    pad = length + offset
    xp = np.pad(x, pad)
    starts = np.asarray(centers) - offset + pad
    idx = starts[:, None] + np.arange(length)[None, :]
    return xp[idx]
