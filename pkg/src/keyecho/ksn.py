"""Keyboard signature normalization: a learnable waveform-domain inverse
filter that suppresses device coloration.

Architecture: a per-frequency magnitude normalization feeds a stack of four
dilated 1-D convolutions (64 channels, kernels 7/7/9/9, dilations 1/2/4/1,
BN + ReLU) whose zero-initialized linear projection is added back onto the
normalized input. At initialization the module is therefore exactly the
frequency normalization, and the correction it learns is free to restore
scale and envelope structure.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np
import torch
from torch import nn

from .audio import Waveform
from .errors import DataError, TrainingDivergedError
from .features import (istft_centered, stft_centered, stft_frames,
                       window_sizes)

_KERNELS = (7, 7, 9, 9)
_DILATIONS = (1, 2, 4, 1)
_CHANNELS = 64
_BN_EPS = 1e-5

# Divisor guards: an absolute floor for silence, and a relative floor that
# keeps near-empty bins from being blown up to unit level.
_ABS_FLOOR = 1e-12
_REL_FLOOR = 1e-4


def _receptive_field() -> int:
    rf = 1
    for k, d in zip(_KERNELS, _DILATIONS):
        rf += (k - 1) * d
    return rf


def _normalize_magnitude(spec: torch.Tensor) -> torch.Tensor:
    """Divide a complex STFT by its 3-bin-smoothed per-bin mean magnitude."""
    mag = spec.abs()
    mean = mag.mean(dim=-1)  # (B, F)
    kernel = torch.full((1, 1, 3), 1.0 / 3.0, dtype=mean.dtype,
                        device=mean.device)
    smoothed = torch.nn.functional.conv1d(
        torch.nn.functional.pad(mean.unsqueeze(1), (1, 1), mode="replicate"),
        kernel).squeeze(1)
    rel_floor = _REL_FLOOR * smoothed.amax(dim=-1, keepdim=True)
    divisor = torch.clamp(smoothed, min=_ABS_FLOOR)
    divisor = torch.maximum(divisor, rel_floor.clamp(min=_ABS_FLOOR))
    return spec / divisor.unsqueeze(-1)


def frequency_normalize_batch(x: torch.Tensor, sample_rate: int,
                              window_ms: float = 25.0,
                              hop_ms: float = 10.0) -> torch.Tensor:
    """Per-bin magnitude mean normalization over time, phase preserved."""
    win, hop = window_sizes(sample_rate, window_ms, hop_ms)
    if x.shape[-1] < win:
        raise DataError(
            f"input of {x.shape[-1]} samples is shorter than one "
            f"{win}-sample analysis frame")
    spec = stft_centered(x, win, hop)
    return istft_centered(_normalize_magnitude(spec), win, hop, x.shape[-1])


def frequency_normalize(waveform: Waveform, window_ms: float = 25.0,
                        hop_ms: float = 10.0) -> Waveform:
    x = torch.as_tensor(np.asarray(waveform.samples, dtype=np.float64))
    out = frequency_normalize_batch(x.unsqueeze(0), waveform.sample_rate,
                                    window_ms, hop_ms)[0]
    return Waveform(out.numpy(), waveform.sample_rate)


def spectral_l1_batch(predicted: torch.Tensor, target: torch.Tensor,
                      sample_rate: int, window_ms: float = 25.0,
                      hop_ms: float = 10.0, floor: float = 1e-8) -> torch.Tensor:
    """Mean absolute log-magnitude STFT difference (scalar tensor)."""
    if predicted.shape != target.shape:
        raise DataError(
            f"length mismatch: {predicted.shape} vs {target.shape}")
    win, hop = window_sizes(sample_rate, window_ms, hop_ms)
    a = stft_frames(predicted, win, hop).abs().clamp(min=floor).log()
    b = stft_frames(target, win, hop).abs().clamp(min=floor).log()
    return (a - b).abs().mean()


def spectral_l1_loss(predicted: Waveform, target: Waveform,
                     window_ms: float = 25.0, hop_ms: float = 10.0) -> float:
    """Scalar spectral L1 distance between two equal-length waveforms."""
    if len(predicted) != len(target):
        raise DataError(
            f"length mismatch: {len(predicted)} vs {len(target)} samples")
    a = torch.as_tensor(np.asarray(predicted.samples, dtype=np.float64))
    b = torch.as_tensor(np.asarray(target.samples, dtype=np.float64))
    return float(spectral_l1_batch(a.unsqueeze(0), b.unsqueeze(0),
                                   predicted.sample_rate, window_ms, hop_ms))


class KsnFilter(nn.Module):
    """Learnable inverse filter; length preserving; identity-plus-correction."""

    def __init__(self, sample_rate: int, window_ms: float = 25.0,
                 hop_ms: float = 10.0):
        super().__init__()
        self.sample_rate = sample_rate
        self.window_ms = window_ms
        self.hop_ms = hop_ms
        layers: list[nn.Module] = []
        in_ch = 1
        for k, d in zip(_KERNELS, _DILATIONS):
            layers += [
                nn.Conv1d(in_ch, _CHANNELS, k, dilation=d, padding="same",
                          bias=False),
                nn.BatchNorm1d(_CHANNELS, eps=_BN_EPS),
                nn.ReLU(),
            ]
            in_ch = _CHANNELS
        self.stack = nn.Sequential(*layers)
        self.proj = nn.Conv1d(_CHANNELS, 1, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    @property
    def min_input_len(self) -> int:
        win, _ = window_sizes(self.sample_rate, self.window_ms, self.hop_ms)
        return max(_receptive_field(), win)

    def frequency_normalize(self, x: torch.Tensor) -> torch.Tensor:
        return frequency_normalize_batch(x, self.sample_rate, self.window_ms,
                                         self.hop_ms)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2:
            raise ValueError(f"expected (batch, samples), got {tuple(x.shape)}")
        if x.shape[-1] < self.min_input_len:
            raise DataError(
                f"input of {x.shape[-1]} samples is below the minimum of "
                f"{self.min_input_len} (receptive field / analysis frame)")
        u = self.frequency_normalize(x)
        correction = self.proj(self.stack(u.unsqueeze(1))).squeeze(1)
        return u + correction


def ksn_forward(filter: KsnFilter, waveform: Waveform) -> Waveform:
    """Single-waveform forward pass in inference mode."""
    x = torch.as_tensor(np.asarray(waveform.samples, dtype=np.float32))
    was_training = filter.training
    filter.eval()
    try:
        with torch.no_grad():
            out = filter(x.unsqueeze(0))[0]
    finally:
        filter.train(was_training)
    return Waveform(out.numpy().astype(np.float64), waveform.sample_rate)


class PretrainResult(NamedTuple):
    filter: KsnFilter
    initial_loss: float
    final_loss: float


def ksn_pretrain(filter: KsnFilter,
                 pairs: Iterable[tuple[np.ndarray, np.ndarray]],
                 epochs: int = 5, lr: float = 2e-4, batch_size: int = 32,
                 seed: int = 0) -> PretrainResult:
    """Optimize the filter so colored inputs map to their latent targets
    under the spectral L1 loss.

    Returns the filter along with the mean loss over the pairs before and
    after training; the final mean never exceeds the initial one because the
    best-seen parameters are kept.
    """
    pair_list = list(pairs)
    if not pair_list:
        raise DataError("ksn_pretrain requires a non-empty pair list")
    colored = torch.as_tensor(
        np.stack([np.asarray(c, dtype=np.float32) for c, _ in pair_list]))
    latent = torch.as_tensor(
        np.stack([np.asarray(s, dtype=np.float32) for _, s in pair_list]))
    if colored.shape != latent.shape:
        raise DataError("colored/latent lengths must match")

    def mean_loss() -> float:
        was_training = filter.training
        filter.eval()
        try:
            with torch.no_grad():
                total = 0.0
                for i in range(0, len(pair_list), batch_size):
                    xb = colored[i:i + batch_size]
                    sb = latent[i:i + batch_size]
                    total += float(spectral_l1_batch(
                        filter(xb), sb, filter.sample_rate, filter.window_ms,
                        filter.hop_ms)) * len(xb)
                return total / len(pair_list)
        finally:
            filter.train(was_training)

    initial = mean_loss()
    best = initial
    best_state = {k: v.detach().clone() for k, v in filter.state_dict().items()}
    optimizer = torch.optim.AdamW(filter.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    filter.train()
    for _ in range(epochs):
        order = rng.permutation(len(pair_list))
        for i in range(0, len(order), batch_size):
            idx = torch.as_tensor(order[i:i + batch_size].copy())
            loss = spectral_l1_batch(filter(colored[idx]), latent[idx],
                                     filter.sample_rate, filter.window_ms,
                                     filter.hop_ms)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"spectral loss diverged; last finite mean loss {best:.6f}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        epoch_loss = mean_loss()
        if epoch_loss <= best:
            best = epoch_loss
            best_state = {k: v.detach().clone()
                          for k, v in filter.state_dict().items()}
    filter.load_state_dict(best_state)
    filter.eval()
    return PretrainResult(filter=filter, initial_loss=initial, final_loss=best)
