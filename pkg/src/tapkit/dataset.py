"""Clean + noise mixing (x = s + g*n), corpus synthesis, and synthetic
oracle signals."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, DegenerateInputError, DimensionError, TapError
from .signal_core import SAMPLE_RATE, Waveform, load_wav, save_wav, to_pipeline_rate

log = logging.getLogger(__name__)

PEAK_LIMIT = 0.99
# Stored components are snapped to multiples of 2**-22: for |values| < 4 such
# numbers, their sums and differences are exact in float32, so the additive
# relation survives a round trip through float-32 WAV files bit for bit.
_GRID = 2.0 ** -22
DEFAULT_SNR_RANGE = (0.0, 20.0)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    """Tile or trim ``noise`` to exactly ``n`` samples."""
    if noise.shape[0] >= n:
        return noise[:n]
    reps = -(-n // noise.shape[0])
    return np.tile(noise, reps)[:n]


@dataclass(frozen=True, eq=False)
class Mixture:
    clean: Waveform   # clean reference after joint peak normalisation
    noise: Waveform   # scaled noise actually added
    noisy: Waveform
    gain: float       # g applied to the raw noise before normalisation
    scale: float      # joint peak-normalisation factor (<= 1)

    @property
    def realized_snr_db(self) -> float:
        return snr_db(self.clean.samples, self.noisy.samples - self.clean.samples)


def snr_db(s, n) -> float:
    return 20.0 * np.log10(rms(s) / rms(n))


def mix(clean: Waveform, noise: Waveform, snr: float) -> Mixture:
    """Scale ``noise`` to the requested SNR against ``clean`` and add.

    The mixture is peak-limited to 0.99; the same factor is applied to the
    returned clean reference and noise so that noisy == clean + noise holds
    sample for sample.
    """
    if clean.sample_rate != noise.sample_rate:
        raise DimensionError("clean and noise sample rates differ")
    s = clean.samples
    n = fit_length(noise.samples, s.shape[0])
    rs, rn = rms(s), rms(n)
    if rs <= 0.0:
        raise DegenerateInputError("clean signal is silent")
    if rn <= 0.0:
        raise DegenerateInputError("noise signal is silent")
    g = rs / (rn * 10.0 ** (snr / 20.0))
    x = s + g * n
    peak = np.max(np.abs(x))
    scale = min(1.0, PEAK_LIMIT / peak) if peak > 0 else 1.0
    s_out = np.round(s * scale / _GRID) * _GRID
    n_out = np.round((g * scale) * n / _GRID) * _GRID
    # noisy is built from the stored parts, so the additive relation is exact
    x_out = s_out + n_out
    fs = clean.sample_rate
    return Mixture(Waveform(s_out, fs), Waveform(n_out, fs), Waveform(x_out, fs), g, scale)


# ---------------------------------------------------------------------------
# Synthetic signals

SIGNAL_KINDS = ("sine", "pulse_train_vowel", "white_noise", "chirp", "silence")
DEFAULT_VOWEL = ((700.0, 130.0), (1220.0, 70.0), (2600.0, 160.0))


def resonator_coefficients(freq, bw, fs):
    """Denominator [1, -2r cos(theta), r^2] of a two-pole resonator."""
    r = np.exp(-np.pi * bw / fs)
    theta = 2.0 * np.pi * freq / fs
    return np.array([1.0, -2.0 * r * np.cos(theta), r * r])


def gen_test_signal(kind: str, duration: float = 1.0, fs: int = SAMPLE_RATE, seed: int = 0,
                    freq: float = 220.0, freq_end: float | None = None, amplitude: float = 0.5,
                    f0: float = 100.0, formants=DEFAULT_VOWEL,
                    source_tilt_db: float = -6.0) -> Waveform:
    """Deterministic fixture signals.

    ``sine`` and ``chirp`` (linear sweep ``freq`` -> ``freq_end``) use
    ``freq``; ``pulse_train_vowel`` drives a cascade of two-pole resonators
    ``formants = ((F, B), ...)`` with a band-limited pulse train at ``f0``.
    The pulse train's harmonics fall by ``source_tilt_db`` per octave; the
    default -6 dB/oct is the combined glottal + radiation tilt that 0.97
    pre-emphasis is designed to flatten. Use 0 for a flat impulse train.
    """
    if kind not in SIGNAL_KINDS:
        raise ConfigError(f"unknown signal kind {kind!r}")
    if duration <= 0:
        raise ConfigError("duration must be positive")
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    nyq = fs / 2.0

    if kind == "silence":
        return Waveform(np.zeros(n), fs)
    if kind == "white_noise":
        rng = np.random.default_rng(seed)
        return Waveform(amplitude * rng.standard_normal(n), fs)
    if kind == "sine":
        if not 0 < freq < nyq:
            raise ConfigError("frequency must lie in (0, fs/2)")
        return Waveform(amplitude * np.sin(2.0 * np.pi * freq * t), fs)
    if kind == "chirp":
        f1 = freq if freq_end is None else freq_end
        if not (0 < freq < nyq and 0 < f1 < nyq):
            raise ConfigError("chirp frequencies must lie in (0, fs/2)")
        phase = 2.0 * np.pi * (freq * t + 0.5 * (f1 - freq) / duration * t * t)
        return Waveform(amplitude * np.sin(phase), fs)

    # pulse_train_vowel
    if not 0 < f0 < nyq:
        raise ConfigError("f0 must lie in (0, fs/2)")
    k = np.arange(1, int(nyq // f0) + 1)
    k = k[k * f0 < nyq]
    amp = k ** (source_tilt_db / (20.0 * np.log10(2.0)))
    src = np.cos(2.0 * np.pi * f0 * np.outer(t, k)) @ amp / amp.sum()
    y = src
    for fc, bw in formants:
        if not (0 < fc < nyq and bw > 0):
            raise ConfigError(f"invalid resonator ({fc}, {bw})")
        den = resonator_coefficients(fc, bw, fs)
        y = lfilter([np.sum(den)], den, y)  # unit gain at DC
    peak = np.max(np.abs(y))
    return Waveform(amplitude * y / peak if peak > 0 else y, fs)


_VOWELS = (
    ((700.0, 130.0), (1220.0, 70.0), (2600.0, 160.0)),
    ((300.0, 60.0), (2300.0, 100.0), (3000.0, 150.0)),
    ((500.0, 80.0), (900.0, 90.0), (2400.0, 150.0)),
    ((350.0, 70.0), (800.0, 80.0), (2250.0, 140.0)),
)


def synthetic_utterance(duration: float = 3.0, fs: int = SAMPLE_RATE, seed: int = 0) -> Waveform:
    """Speech-like fixture: vowels with gliding pitch, fricative noise bursts
    and short pauses, with raised-cosine fades between segments."""
    if duration <= 0:
        raise ConfigError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        kind = rng.choice(3, p=[0.6, 0.25, 0.15])
        seg = int(fs * rng.uniform(0.08, 0.3))
        seg = min(seg, n - pos)
        if kind == 0 and seg >= 64:
            f0a, f0b = rng.uniform(90.0, 240.0, size=2)
            vowel = _VOWELS[rng.integers(len(_VOWELS))]
            # gliding f0 through a phase accumulator over the harmonic series
            f0 = np.linspace(f0a, f0b, seg)
            phase = 2.0 * np.pi * np.cumsum(f0) / fs
            k = np.arange(1, int(fs / 2 // max(f0a, f0b)) + 1)
            src = np.cos(np.outer(phase, k)) @ (1.0 / k)
            y = src
            for fc, bw in vowel:
                den = resonator_coefficients(fc, bw, fs)
                y = lfilter([np.sum(den)], den, y)
            y = rng.uniform(0.2, 0.6) * y / max(np.max(np.abs(y)), 1e-12)
        elif kind == 1:
            b = [1.0, -0.9]  # high-pass tilt
            y = rng.uniform(0.02, 0.1) * lfilter(b, [1.0], rng.standard_normal(seg))
        else:
            y = np.zeros(seg)
        ramp = min(80, seg // 2)
        if ramp > 0:
            fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            y[:ramp] *= fade
            y[seg - ramp :] *= fade[::-1]
        out[pos : pos + seg] = y
        pos += seg
    return Waveform(out, fs)


# ---------------------------------------------------------------------------
# Corpus synthesis

@dataclass(frozen=True)
class MixSpec:
    id: str
    clean_path: str
    noise_path: str
    snr_db: float
    seed: int = 0
    target_len: float = 3.0
    split: str = "train"

    def __post_init__(self):
        if self.target_len <= 0:
            raise ConfigError("target_len must be positive")
        if self.split not in ("train", "dev", "test"):
            raise ConfigError(f"unknown split {self.split!r}")


def read_mix_manifest(path) -> list[MixSpec]:
    specs = []
    base = Path(path).parent
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        specs.append(MixSpec(
            id=str(rec["id"]),
            clean_path=str(base / rec["clean"]),
            noise_path=str(base / rec["noise"]),
            snr_db=float(rec["snr_db"]),
            seed=int(rec.get("seed", 0)),
            target_len=float(rec.get("target_len", 3.0)),
            split=rec.get("split", "train"),
        ))
    return specs


def validate_manifest(specs) -> None:
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate utterance ids in manifest")


def _crop(x: np.ndarray, n: int, rng) -> np.ndarray:
    if x.shape[0] <= n:
        return fit_length(x, n)
    start = int(rng.integers(0, x.shape[0] - n + 1))
    return x[start : start + n]


def synthesize_entry(spec: MixSpec, out_dir) -> dict:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    clean = to_pipeline_rate(load_wav(spec.clean_path))
    noise = to_pipeline_rate(load_wav(spec.noise_path))
    n = int(round(spec.target_len * SAMPLE_RATE))
    clean = Waveform(_crop(clean.samples, n, rng), SAMPLE_RATE)
    noise = Waveform(_crop(noise.samples, n, rng), SAMPLE_RATE)
    m = mix(clean, noise, spec.snr_db)
    sub = out_dir / spec.split
    sub.mkdir(parents=True, exist_ok=True)
    paths = {k: sub / f"{spec.id}_{k}.wav" for k in ("clean", "noise", "noisy")}
    save_wav(paths["clean"], m.clean)
    save_wav(paths["noise"], m.noise)
    save_wav(paths["noisy"], m.noisy)
    # realised SNR measured on what was written (float-32)
    s32 = m.clean.samples.astype(np.float32).astype(np.float64)
    x32 = m.noisy.samples.astype(np.float32).astype(np.float64)
    return {
        "id": spec.id,
        "clean": str(paths["clean"].relative_to(out_dir)),
        "noise": str(paths["noise"].relative_to(out_dir)),
        "noisy": str(paths["noisy"].relative_to(out_dir)),
        "snr_requested_db": spec.snr_db,
        "snr_realized_db": snr_db(s32, x32 - s32),
        "scale": m.scale,
        "split": spec.split,
    }


def synthesize_corpus(specs, out_dir, manifest_name="manifest.jsonl"):
    """Write clean/noise/noisy WAV triples and a JSONL manifest.

    Per-entry failures are logged and returned; they do not abort the batch.
    Returns (records, errors) where errors is a list of (id, message).
    """
    validate_manifest(specs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, errors = [], []
    for spec in specs:
        try:
            records.append(synthesize_entry(spec, out_dir))
        except (OSError, TapError) as exc:
            log.error("entry %s failed: %s", spec.id, exc)
            errors.append((spec.id, str(exc)))
    with open(out_dir / manifest_name, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records, errors
