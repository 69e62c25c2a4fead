"""Log-mel feature extraction and shared STFT helpers.

The torch paths are differentiable so the normalization filter upstream can
be optimized end to end; the numpy-facing wrappers serve everything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .audio import Waveform
from .errors import DataError

LOG_MEL_EPS = 1e-10
DEFAULT_WINDOW_MS = 25.0
DEFAULT_HOP_MS = 10.0


def frame_counts(n_samples: int, win: int, hop: int) -> int:
    """Number of full analysis frames: floor((N - win) / hop) + 1."""
    if n_samples < win:
        raise DataError(
            f"waveform of {n_samples} samples is shorter than one "
            f"{win}-sample analysis window")
    return (n_samples - win) // hop + 1


def window_sizes(sample_rate: int, window_ms: float, hop_ms: float) -> tuple[int, int]:
    win = int(round(window_ms * sample_rate / 1000.0))
    hop = int(round(hop_ms * sample_rate / 1000.0))
    if win <= 0 or hop <= 0:
        raise ValueError("window and hop must be positive")
    return win, hop


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(sample_rate: int, n_fft: int, mel_bins: int,
                   fmin: float = 0.0, fmax: float | None = None):
    """Triangular mel filterbank (peak height 1) and its center frequencies.

    Returns (weights of shape (mel_bins, n_fft // 2 + 1), centers_hz).
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), mel_bins + 2)
    hz_points = mel_to_hz(mel_points)
    weights = np.zeros((mel_bins, n_bins))
    for b in range(mel_bins):
        left, center, right = hz_points[b], hz_points[b + 1], hz_points[b + 2]
        up = (fft_freqs - left) / max(center - left, 1e-12)
        down = (right - fft_freqs) / max(right - center, 1e-12)
        weights[b] = np.maximum(0.0, np.minimum(up, down))
    centers_hz = hz_points[1:-1]
    return weights, centers_hz


@lru_cache(maxsize=32)
def _hann(win: int, dtype_name: str) -> torch.Tensor:
    return torch.hann_window(win, periodic=True,
                             dtype=getattr(torch, dtype_name))


def log_mel_batch(x: torch.Tensor, sample_rate: int, mel_bins: int = 40,
                  window_ms: float = DEFAULT_WINDOW_MS,
                  hop_ms: float = DEFAULT_HOP_MS,
                  eps: float = LOG_MEL_EPS) -> torch.Tensor:
    """Log mel-energy spectrograms for a batch of waveforms (B, N) -> (B, F, L).

    Frames are left-aligned with no padding, so L matches
    floor((N - win) / hop) + 1 exactly.
    """
    win, hop = window_sizes(sample_rate, window_ms, hop_ms)
    frame_counts(x.shape[-1], win, hop)
    window = _hann(win, str(x.dtype).split(".")[-1]).to(x.device)
    spec = torch.stft(x, n_fft=win, hop_length=hop, win_length=win,
                      window=window, center=False, return_complex=True)
    power = spec.abs() ** 2
    weights, _ = mel_filterbank(sample_rate, win, mel_bins)
    fb = torch.as_tensor(weights, dtype=x.dtype, device=x.device)
    mel = torch.matmul(fb, power)
    return torch.log(mel + eps)


@dataclass(frozen=True)
class LogMelSpectrogram:
    """F x L log mel-energy matrix plus its framing configuration."""

    values: np.ndarray
    mel_bins: int
    frames: int
    window_ms: float
    hop_ms: float
    sample_rate: int
    log_floor: float = LOG_MEL_EPS

    def __post_init__(self):
        if self.values.shape != (self.mel_bins, self.frames):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"({self.mel_bins}, {self.frames})")


def log_mel(waveform: Waveform, mel_bins: int = 40,
            window_ms: float = DEFAULT_WINDOW_MS,
            hop_ms: float = DEFAULT_HOP_MS,
            eps: float = LOG_MEL_EPS) -> LogMelSpectrogram:
    """Log-mel spectrogram of a single waveform."""
    x = torch.as_tensor(np.asarray(waveform.samples, dtype=np.float64))
    values = log_mel_batch(x.unsqueeze(0), waveform.sample_rate, mel_bins,
                           window_ms, hop_ms, eps)[0].numpy()
    return LogMelSpectrogram(values=values, mel_bins=mel_bins,
                             frames=values.shape[1], window_ms=window_ms,
                             hop_ms=hop_ms, sample_rate=waveform.sample_rate,
                             log_floor=eps)


def stft_centered(x: torch.Tensor, win: int, hop: int) -> torch.Tensor:
    """Invertible centered STFT, (B, N) -> complex (B, win // 2 + 1, T)."""
    window = _hann(win, str(x.dtype).split(".")[-1]).to(x.device)
    return torch.stft(x, n_fft=win, hop_length=hop, win_length=win,
                      window=window, center=True, return_complex=True)


def istft_centered(spec: torch.Tensor, win: int, hop: int, length: int) -> torch.Tensor:
    window = _hann(win, "float64" if spec.dtype == torch.complex128
                   else "float32").to(spec.device)
    return torch.istft(spec, n_fft=win, hop_length=hop, win_length=win,
                       window=window, center=True, length=length)


def stft_frames(x: torch.Tensor, win: int, hop: int) -> torch.Tensor:
    """Left-aligned STFT without padding (matches the log-mel frame count)."""
    window = _hann(win, str(x.dtype).split(".")[-1]).to(x.device)
    return torch.stft(x, n_fft=win, hop_length=hop, win_length=win,
                      window=window, center=False, return_complex=True)
