"""Loss and evaluation maths.

* ``mae`` / ``mae_per_parameter``: mean absolute error over the whole matrix
  or per parameter (over time only).
* ``tap_loss``: MAE between clean and enhanced TAP matrices, each row scaled
  by a sigmoid-smoothed frame-energy weight computed from the enhanced
  spectrogram.
* waveform L1, multi-resolution STFT, cIRM construction and MSE, and the two
  composite enhancement objectives built from them.
* ``pai_report``: per-parameter percent acoustic improvement.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .acoustics import PARAMETER_NAMES, as_array
from .errors import ConfigError, DimensionError, SizeError
from .signal_core import ComplexSpectrogram, StftConfig, Waveform, frame_energy, stft

LOG_ENERGY_EPS = 1e-10
PAI_FLOOR = 1e-12
MAG_EPS = 1e-7
CIRM_FLOOR = 1e-8
CIRM_K = 10.0
CIRM_C = 0.1
STFT_RESOLUTIONS = ((512, 50, 240), (1024, 120, 600), (2048, 240, 1200))


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.3
    gamma: float = 0.03

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.gamma) < 0:
            raise ConfigError("loss weights must be nonnegative")


def _pair(a, b):
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def mae_per_parameter(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return np.mean(np.abs(a - b), axis=0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def smooth_energy_weights(omega, mode: str = "normalized") -> np.ndarray:
    """Per-frame weights in (0, 1) from frame energies.

    ``raw`` applies the sigmoid to the energies directly. ``normalized``
    first replaces them by the per-utterance z-score of log10(omega + 1e-10),
    which makes the weighting independent of signal level.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if mode == "raw":
        return sigmoid(omega)
    if mode != "normalized":
        raise ConfigError(f"unknown weighting mode {mode!r}")
    le = np.log10(omega + LOG_ENERGY_EPS)
    sd = le.std()
    z = (le - le.mean()) / sd if sd > 1e-12 else np.zeros_like(le)
    return sigmoid(z)


def _weights_for(a, omega, mode):
    w = smooth_energy_weights(omega, mode)
    if w.shape != (a.shape[0],):
        raise DimensionError(f"omega has length {w.shape}, matrices have T={a.shape[0]}")
    return w


def tap_loss(a_clean, a_enh, omega, mode: str = "normalized") -> float:
    a, b = _pair(a_clean, a_enh)
    w = _weights_for(a, omega, mode)
    # |w*a - w*b| == w*|a - b| for w >= 0
    return float(np.mean(w[:, None] * np.abs(a - b)))


def tap_loss_grad(a_clean, a_enh, omega, mode: str = "normalized") -> np.ndarray:
    """d tap_loss / d a_enh with omega held constant; sign(0) = 0."""
    a, b = _pair(a_clean, a_enh)
    w = _weights_for(a, omega, mode)
    return w[:, None] * np.sign(b - a) / a.size


def tap_loss_from_spectrogram(a_clean, a_enh, spec_enh: ComplexSpectrogram, mode="normalized") -> float:
    return tap_loss(a_clean, a_enh, frame_energy(spec_enh), mode)


# ---------------------------------------------------------------------------
# Waveform-domain objectives

def _wave_pair(s, s_hat):
    x = s.samples if isinstance(s, Waveform) else np.asarray(s, dtype=np.float64)
    y = s_hat.samples if isinstance(s_hat, Waveform) else np.asarray(s_hat, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch {x.shape} vs {y.shape}")
    if isinstance(s, Waveform) and isinstance(s_hat, Waveform) and s.sample_rate != s_hat.sample_rate:
        raise DimensionError("sample rates differ")
    return x, y


def waveform_l1_loss(s, s_hat) -> float:
    x, y = _wave_pair(s, s_hat)
    return float(np.mean(np.abs(x - y)))


def stft_loss_terms(s, s_hat, n_fft, hop, win):
    """(spectral convergence, log-magnitude L1) at one resolution."""
    x, y = _wave_pair(s, s_hat)
    cfg = StftConfig(n_fft=n_fft, hop=hop, window="hann", center_pad=True, win_length=win)
    S = np.abs(stft(Waveform(x, 16000), cfg).data)
    Sh = np.abs(stft(Waveform(y, 16000), cfg).data)
    ref = np.linalg.norm(S)
    diff = np.linalg.norm(S - Sh)
    sc = diff / ref if ref > 0 else (0.0 if diff == 0 else np.inf)
    mag = np.mean(np.abs(np.log(S + MAG_EPS) - np.log(Sh + MAG_EPS)))
    return float(sc), float(mag)


def multires_stft_loss(s, s_hat, resolutions=STFT_RESOLUTIONS) -> float:
    x, _ = _wave_pair(s, s_hat)
    longest = max(win for _, _, win in resolutions)
    if x.shape[0] < longest:
        raise SizeError(f"signal of {x.shape[0]} samples shorter than window {longest}")
    return float(sum(sum(stft_loss_terms(s, s_hat, *r)) for r in resolutions))


def composite_demucs_loss(s, s_hat, a_clean, a_enh, omega, weights: LossWeights,
                          mode="normalized") -> float:
    """Waveform L1 + lambda1 * TAP loss + lambda2 * multi-resolution STFT loss."""
    total = waveform_l1_loss(s, s_hat)
    if weights.lambda1:
        total += weights.lambda1 * tap_loss(a_clean, a_enh, omega, mode)
    if weights.lambda2:
        total += weights.lambda2 * multires_stft_loss(s, s_hat)
    return total


# ---------------------------------------------------------------------------
# Complex ideal ratio mask

def _cplx(x):
    return x.data if isinstance(x, ComplexSpectrogram) else np.asarray(x, dtype=np.complex128)


def compute_cirm(S, X, compress: bool = False) -> np.ndarray:
    """Complex ratio S / X with |X| floored at 1e-8 (phase kept).

    With ``compress`` each real/imag component m is mapped through
    K (1 - e^{-C m}) / (1 + e^{-C m}), K = 10, C = 0.1.
    """
    s, x = _cplx(S), _cplx(X)
    if s.shape != x.shape:
        raise DimensionError(f"shape mismatch {s.shape} vs {x.shape}")
    mag = np.abs(x)
    small = mag < CIRM_FLOOR
    safe = np.where(small, np.where(mag > 0, x / np.where(mag > 0, mag, 1.0), 1.0) * CIRM_FLOOR, x)
    m = s / safe
    if compress:
        m = compress_mask(m.real) + 1j * compress_mask(m.imag)
    return m


def compress_mask(v, K=CIRM_K, C=CIRM_C):
    # K (1 - e^{-Cv}) / (1 + e^{-Cv}) == K tanh(Cv / 2), which cannot overflow
    return K * np.tanh(0.5 * C * np.asarray(v, dtype=np.float64))


def apply_mask(M, X) -> np.ndarray:
    return _cplx(M) * _cplx(X)


def cirm_mse_loss(M_true, M_est) -> float:
    a, b = _cplx(M_true), _cplx(M_est)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(np.concatenate([d.real.ravel() ** 2, d.imag.ravel() ** 2])))


def composite_fullsubnet_loss(M_true, M_est, a_clean, a_enh, omega, weights: LossWeights,
                              mode="normalized") -> float:
    """cIRM MSE + gamma * TAP loss."""
    total = cirm_mse_loss(M_true, M_est)
    if weights.gamma:
        total += weights.gamma * tap_loss(a_clean, a_enh, omega, mode)
    return total


# ---------------------------------------------------------------------------
# Percent acoustic improvement

@dataclass
class PaiReport:
    baseline_vs_noisy: np.ndarray
    ours_vs_noisy: np.ndarray
    ours_vs_baseline: np.ndarray
    degenerate: dict = field(default_factory=dict)  # vector name -> flagged indices
    parameters: tuple = PARAMETER_NAMES

    VECTORS = ("baseline_vs_noisy", "ours_vs_noisy", "ours_vs_baseline")

    @property
    def means(self) -> dict:
        """Means over the non-degenerate entries of each vector (0 if none)."""
        out = {}
        for name in self.VECTORS:
            v = getattr(self, name)
            keep = np.ones(v.shape[0], dtype=bool)
            keep[list(self.degenerate.get(name, []))] = False
            out[name] = float(v[keep].mean()) if keep.any() else 0.0
        return out

    @property
    def degenerate_indices(self) -> list:
        return sorted(set().union(*(set(v) for v in self.degenerate.values())) if self.degenerate else set())

    def to_dict(self) -> dict:
        return {
            "parameters": list(self.parameters),
            "baseline_vs_noisy": self.baseline_vs_noisy.tolist(),
            "ours_vs_noisy": self.ours_vs_noisy.tolist(),
            "ours_vs_baseline": self.ours_vs_baseline.tolist(),
            "means": self.means,
            "degenerate": self.degenerate_indices,
            "degenerate_by_vector": {k: list(v) for k, v in self.degenerate.items()},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d) -> "PaiReport":
        return cls(
            np.asarray(d["baseline_vs_noisy"], dtype=np.float64),
            np.asarray(d["ours_vs_noisy"], dtype=np.float64),
            np.asarray(d["ours_vs_baseline"], dtype=np.float64),
            {k: list(v) for k, v in d.get("degenerate_by_vector", {}).items()},
            tuple(d.get("parameters", PARAMETER_NAMES)),
        )


def percent_improvement(err_new, err_ref):
    """100 * (1 - err_new / err_ref) with the reference floored; returns
    (values, degenerate indices)."""
    err_new = np.asarray(err_new, dtype=np.float64)
    err_ref = np.asarray(err_ref, dtype=np.float64)
    degen = err_ref < PAI_FLOOR
    values = 100.0 * (1.0 - err_new / np.maximum(err_ref, PAI_FLOOR))
    return values, np.flatnonzero(degen).tolist()


def pai_report(a_clean, a_noisy, a_baseline, a_ours) -> PaiReport:
    c = as_array(a_clean)
    for other in (a_noisy, a_baseline, a_ours):
        _pair(c, other)
    e_x = mae_per_parameter(a_noisy, c)
    e_1 = mae_per_parameter(a_baseline, c)
    e_2 = mae_per_parameter(a_ours, c)
    b_x, d_x = percent_improvement(e_1, e_x)
    o_x, _ = percent_improvement(e_2, e_x)
    o_b, d_b = percent_improvement(e_2, e_1)
    degenerate = {"baseline_vs_noisy": d_x, "ours_vs_noisy": list(d_x), "ours_vs_baseline": d_b}
    return PaiReport(b_x, o_x, o_b, degenerate)


def aggregate_pai(reports) -> PaiReport:
    """Corpus-level report: entrywise mean over utterances, degenerate where
    every utterance was degenerate for that entry."""
    reports = list(reports)
    if not reports:
        raise ConfigError("no reports to aggregate")
    vecs = {}
    degenerate = {}
    for name in PaiReport.VECTORS:
        stack = np.stack([getattr(r, name) for r in reports])
        mask = np.zeros_like(stack, dtype=bool)
        for i, r in enumerate(reports):
            mask[i, r.degenerate.get(name, [])] = True
        ok = ~mask
        counts = ok.sum(axis=0)
        vecs[name] = np.where(counts > 0, np.where(ok, stack, 0.0).sum(axis=0) / np.maximum(counts, 1), 0.0)
        degenerate[name] = np.flatnonzero(counts == 0).tolist()
    return PaiReport(vecs["baseline_vs_noisy"], vecs["ours_vs_noisy"], vecs["ours_vs_baseline"], degenerate)

