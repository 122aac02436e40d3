"""tapkit: temporal acoustic parameters, energy-weighted TAP loss, a recurrent
TAP estimator and corpus tooling for speech enhancement experiments."""

__version__ = "0.1.0"

from .acoustics import PARAMETER_NAMES, TapMatrix, extract_all, standardize
from .signal_core import ComplexSpectrogram, StftConfig, Waveform, istft, load_wav, save_wav, stft

__all__ = [
    "PARAMETER_NAMES", "TapMatrix", "extract_all", "standardize",
    "ComplexSpectrogram", "StftConfig", "Waveform", "istft", "load_wav", "save_wav", "stft",
]
