"""Waveform I/O, resampling, STFT/iSTFT and frame energy.

All processing downstream of :func:`load_wav` runs at 16 kHz on a 10 ms
frame grid (hop 160, n_fft 512, so F = 257 frequency bins).
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .errors import ConfigError, FormatError, SizeError, UnsupportedFormatError

SAMPLE_RATE = 16000


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(np.ravel(self.samples), np.float64))
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = 160
    window: str = "hann"
    center_pad: bool = True
    win_length: int | None = None  # None means n_fft

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ConfigError(f"hop must be in (0, n_fft], got {self.hop}")
        if self.window not in ("hann", "rect"):
            raise ConfigError(f"unknown window {self.window!r}")
        if self.win_length is not None and not 0 < self.win_length <= self.n_fft:
            raise ConfigError("win_length must be in (0, n_fft]")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def window_array(self) -> np.ndarray:
        wl = self.win_length or self.n_fft
        if self.window == "hann":
            # periodic Hann
            w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(wl) / wl)
        else:
            w = np.ones(wl)
        if wl < self.n_fft:
            left = (self.n_fft - wl) // 2
            w = np.pad(w, (left, self.n_fft - wl - left))
        return w


DEFAULT_STFT = StftConfig()


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    data: np.ndarray  # (T, F) complex128
    config: StftConfig = field(default=DEFAULT_STFT)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        d = _frozen(self.data, np.complex128)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] != self.config.n_bins:
            raise ConfigError(
                f"spectrogram shape {d.shape} incompatible with n_fft={self.config.n_fft}"
            )
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    def freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.config.n_fft


# ---------------------------------------------------------------------------
# WAV I/O

def load_wav(path) -> Waveform:
    """Read a PCM-16 or float-32 RIFF/WAVE file as a mono float waveform."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise FormatError(f"{path}: truncated file") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        if x.shape[1] > 2:
            raise UnsupportedFormatError(f"{path}: {x.shape[1]} channels")
        x = x.mean(axis=1)
    return Waveform(x, int(rate))


def save_wav(path, w: Waveform) -> None:
    """Write a float-32 mono WAV."""
    wavfile.write(Path(path), w.sample_rate, np.asarray(w.samples, dtype=np.float32))


# ---------------------------------------------------------------------------
# Resampling

RESAMPLE_HALF_TAPS = 32
RESAMPLE_KAISER_BETA = 8.6


def _resample_filter(up: int, down: int) -> np.ndarray:
    # 64 taps per polyphase branch at the faster of the two rates
    ratio = max(up, down)
    n = 2 * RESAMPLE_HALF_TAPS * ratio + 1
    h = sps.firwin(n, 1.0 / ratio, window=("kaiser", RESAMPLE_KAISER_BETA))
    return h * up


def resample(w: Waveform, target_rate: int) -> Waveform:
    if target_rate <= 0:
        raise ConfigError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    g = gcd(int(target_rate), w.sample_rate)
    up, down = target_rate // g, w.sample_rate // g
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    y = sps.resample_poly(w.samples, up, down, window=_resample_filter(up, down) / up)
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return Waveform(y, target_rate)


def to_pipeline_rate(w: Waveform) -> Waveform:
    return resample(w, SAMPLE_RATE)


# ---------------------------------------------------------------------------
# STFT

def n_frames_for(n_samples: int, cfg: StftConfig = DEFAULT_STFT) -> int:
    padded = n_samples + (2 * (cfg.n_fft // 2) if cfg.center_pad else 0)
    if padded < cfg.n_fft:
        raise SizeError(f"signal of {n_samples} samples shorter than n_fft={cfg.n_fft}")
    return 1 + (padded - cfg.n_fft) // cfg.hop


def _pad_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if not cfg.center_pad:
        return x
    p = cfg.n_fft // 2
    if x.shape[0] > p:
        return np.pad(x, p, mode="reflect")
    # too short to reflect: numpy's reflect would wrap repeatedly, use zeros
    return np.pad(x, p)


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """(T, n_fft) view of the (padded) signal; frame t starts at t*hop."""
    xp = _pad_signal(np.asarray(x, dtype=np.float64), cfg)
    T = n_frames_for(x.shape[0], cfg)
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.n_fft)[:: cfg.hop]
    return frames[:T]


def stft(w: Waveform, cfg: StftConfig = DEFAULT_STFT) -> ComplexSpectrogram:
    if len(w) == 0:
        raise SizeError("empty waveform")
    frames = frame_signal(w.samples, cfg) * cfg.window_array()
    return ComplexSpectrogram(np.fft.rfft(frames, axis=1), cfg, w.sample_rate)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Weighted overlap-add inverse with window-square normalisation."""
    cfg = spec.config
    if cfg.window != "hann" or cfg.hop > cfg.n_fft // 2 or cfg.win_length not in (None, cfg.n_fft):
        raise ConfigError("istft needs a full-length hann window with hop <= n_fft/2")
    win = cfg.window_array()
    frames = np.fft.irfft(spec.data, n=cfg.n_fft, axis=1) * win
    T = spec.n_frames
    total = cfg.n_fft + (T - 1) * cfg.hop
    out = np.zeros(total)
    wsum = np.zeros(total)
    w2 = win * win
    for t in range(T):
        s = t * cfg.hop
        out[s : s + cfg.n_fft] += frames[t]
        wsum[s : s + cfg.n_fft] += w2
    nz = wsum > 1e-10
    out[nz] /= wsum[nz]
    if cfg.center_pad:
        # only the left pad is known exactly; the right edge depends on the
        # original length, which defaults to (T - 1) * hop
        out = out[cfg.n_fft // 2 :]
        if length is None:
            length = (T - 1) * cfg.hop
    if length is not None:
        out = out[:length] if out.shape[0] >= length else np.pad(out, (0, length - out.shape[0]))
    return Waveform(out, spec.sample_rate)


def frame_energy(spec: ComplexSpectrogram) -> np.ndarray:
    """Mean power across frequency bins per frame."""
    d = spec.data
    return np.mean(d.real ** 2 + d.imag ** 2, axis=1)


# ---------------------------------------------------------------------------
# Spectrogram debug dump

_SPEC_MAGIC = b"TAPS"
_SPEC_VERSION = 1
_SPEC_HEADER = struct.Struct("<4sIQQIII")


def write_spectrogram(path, spec: ComplexSpectrogram) -> None:
    T, F = spec.data.shape
    head = _SPEC_HEADER.pack(_SPEC_MAGIC, _SPEC_VERSION, T, F, spec.sample_rate,
                             spec.config.n_fft, spec.config.hop)
    body = np.empty((T, F, 2), dtype="<f8")
    body[..., 0] = spec.data.real
    body[..., 1] = spec.data.imag
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body.tobytes())


def read_spectrogram(path, window: str = "hann", center_pad: bool = True) -> ComplexSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _SPEC_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, T, F, rate, n_fft, hop = _SPEC_HEADER.unpack_from(raw)
    if magic != _SPEC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _SPEC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    need = _SPEC_HEADER.size + T * F * 16
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_SPEC_HEADER.size).reshape(T, F, 2)
    cfg = StftConfig(n_fft=n_fft, hop=hop, window=window, center_pad=center_pad)
    return ComplexSpectrogram(body[..., 0] + 1j * body[..., 1], cfg, rate)
