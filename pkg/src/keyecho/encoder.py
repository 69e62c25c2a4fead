"""Temporal encoder with statistics pooling, embedding head, key and domain
classifiers, and the gradient-reversal connective used for adversarial
domain suppression.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    mel_bins: int = 40
    channels: int = 128
    embedding_dim: int = 192
    num_keys: int = 26
    num_domains: int = 2
    grl_lambda: float = 1.0

    def __post_init__(self):
        for name in ("mel_bins", "channels", "embedding_dim", "num_keys",
                     "num_domains"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.grl_lambda < 0:
            raise ValueError("grl_lambda must be >= 0")


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.lam * grad_output, None


def grl(z: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity forward; backward multiplies the gradient by -lam."""
    if lam < 0:
        raise ValueError("grl lambda must be >= 0")
    return _GradientReversal.apply(z, lam)


class SqueezeExcite(nn.Module):
    """Channel recalibration from time-averaged channel statistics."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = x.mean(dim=-1)
        s = torch.sigmoid(self.fc2(torch.relu(self.fc1(s))))
        return x * s.unsqueeze(-1)


def stats_pool(features: torch.Tensor) -> torch.Tensor:
    """Concatenate per-channel time mean and population std, (.., C, L) -> (.., 2C)."""
    if features.shape[-1] < 1:
        raise ValueError("stats_pool requires at least one frame")
    mean = features.mean(dim=-1)
    var = ((features - mean.unsqueeze(-1)) ** 2).mean(dim=-1)
    std = torch.sqrt(torch.clamp(var, min=0.0))
    return torch.cat([mean, std], dim=-1)


class KeystrokeEncoder(nn.Module):
    """Multi-scale temporal conv encoder with SE recalibration.

    frame_encode keeps the frame count; stats pooling and a linear head
    produce the embedding; separate linear heads yield key and domain
    posteriors. The domain head always sees the embedding through the
    gradient-reversal connective.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.stem = nn.Sequential(
            nn.Conv1d(config.mel_bins, c, 5, padding="same"),
            nn.ReLU(),
            nn.BatchNorm1d(c),
        )
        blocks = []
        for dilation in (2, 3, 4):
            blocks.append(nn.Sequential(
                nn.Conv1d(c, c, 3, dilation=dilation, padding="same"),
                nn.ReLU(),
                nn.BatchNorm1d(c),
                SqueezeExcite(c),
            ))
        self.blocks = nn.ModuleList(blocks)
        self.embed_head = nn.Linear(2 * c, config.embedding_dim)
        self.key_head = nn.Linear(config.embedding_dim, config.num_keys)
        self.domain_head = nn.Sequential(
            nn.Linear(config.embedding_dim, 64),
            nn.ReLU(),
            nn.Linear(64, config.num_domains),
        )

    def frame_encode(self, spectrogram: torch.Tensor) -> torch.Tensor:
        if spectrogram.shape[-2] != self.config.mel_bins:
            raise ValueError(
                f"expected {self.config.mel_bins} mel bins, got "
                f"{spectrogram.shape[-2]}")
        h = self.stem(spectrogram)
        for block in self.blocks:
            h = h + block(h)
        return h

    def project_embed(self, pooled: torch.Tensor) -> torch.Tensor:
        if pooled.shape[-1] != 2 * self.config.channels:
            raise ValueError(
                f"expected pooled dim {2 * self.config.channels}, got "
                f"{pooled.shape[-1]}")
        return self.embed_head(pooled)

    def embed(self, spectrogram: torch.Tensor) -> torch.Tensor:
        return self.project_embed(stats_pool(self.frame_encode(spectrogram)))

    def key_posterior(self, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.key_head(z), dim=-1)

    def domain_posterior(self, z: torch.Tensor,
                         lam: float | None = None) -> torch.Tensor:
        lam = self.config.grl_lambda if lam is None else lam
        return torch.softmax(self.domain_head(grl(z, lam)), dim=-1)

    def forward(self, spectrogram: torch.Tensor) -> dict[str, torch.Tensor]:
        z = self.embed(spectrogram)
        z_norm = torch.nn.functional.normalize(z, dim=-1)
        return {
            "embedding": z,
            "embedding_norm": z_norm,
            "key_posterior": self.key_posterior(z),
            "domain_posterior": self.domain_posterior(z),
        }
