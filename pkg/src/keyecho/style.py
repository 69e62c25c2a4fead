"""Acoustic style randomization: random IIR coloration, mel-envelope warping,
and exponential decay perturbation for simulating unseen keyboards.

All transforms are pure functions of (waveform, params); randomness lives
entirely in sample_style.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import signal as sps

from .audio import Waveform
from .features import hz_to_mel, mel_to_hz

IIR_ORDER_CHOICES = (6, 8, 10, 12)
Q_RANGE = (0.4, 1.2)
CENTER_FREQ_RANGE_HZ = (300.0, 8000.0)
# Calibrated so styled keystroke impulses keep an RMS within [0.3, 3] x input
GAIN_DB_RANGE = (-4.0, 4.0)
MEL_SHIFT_RANGE = (-0.12, 0.12)
GAMMA_RANGE = (0.85, 1.15)
DECAY_REF_S = 0.05  # reference time constant for the decay envelope


@dataclass(frozen=True)
class StyleParams:
    """Parameters of one sampled acoustic style.

    ``gains_db`` carries the per-section peak gain of the coloration filter;
    it is derived deterministically in sample_style so that a StyleParams
    value fully determines the transform.
    """

    iir_order: int
    q_factors: tuple[float, ...]
    center_freqs_hz: tuple[float, ...]
    gains_db: tuple[float, ...]
    mel_shift: float
    gamma: float
    seed: int

    def __post_init__(self):
        if self.iir_order not in IIR_ORDER_CHOICES:
            raise ValueError(f"iir_order must be one of {IIR_ORDER_CHOICES}")
        n_sections = self.iir_order // 2
        for name, values in (("q_factors", self.q_factors),
                             ("center_freqs_hz", self.center_freqs_hz),
                             ("gains_db", self.gains_db)):
            if len(values) != n_sections:
                raise ValueError(f"{name} must have {n_sections} entries")
        for q in self.q_factors:
            if not Q_RANGE[0] <= q <= Q_RANGE[1]:
                raise ValueError(f"Q {q} outside {Q_RANGE}")
        for f in self.center_freqs_hz:
            if not CENTER_FREQ_RANGE_HZ[0] <= f <= CENTER_FREQ_RANGE_HZ[1]:
                raise ValueError(f"center {f} Hz outside {CENTER_FREQ_RANGE_HZ}")
        for g in self.gains_db:
            if not GAIN_DB_RANGE[0] <= g <= GAIN_DB_RANGE[1]:
                raise ValueError(f"gain {g} dB outside {GAIN_DB_RANGE}")
        if not MEL_SHIFT_RANGE[0] <= self.mel_shift <= MEL_SHIFT_RANGE[1]:
            raise ValueError(f"mel_shift {self.mel_shift} outside {MEL_SHIFT_RANGE}")
        if not GAMMA_RANGE[0] <= self.gamma <= GAMMA_RANGE[1]:
            raise ValueError(f"gamma {self.gamma} outside {GAMMA_RANGE}")

    @property
    def n_sections(self) -> int:
        return self.iir_order // 2


def sample_style(rng_seed: int) -> StyleParams:
    """Draw one style; deterministic given the seed."""
    rng = np.random.default_rng(rng_seed)
    order = int(rng.choice(IIR_ORDER_CHOICES))
    n_sections = order // 2
    return StyleParams(
        iir_order=order,
        q_factors=tuple(rng.uniform(*Q_RANGE, size=n_sections).tolist()),
        center_freqs_hz=tuple(rng.uniform(*CENTER_FREQ_RANGE_HZ,
                                          size=n_sections).tolist()),
        gains_db=tuple(rng.uniform(*GAIN_DB_RANGE, size=n_sections).tolist()),
        mel_shift=float(rng.uniform(*MEL_SHIFT_RANGE)),
        gamma=float(rng.uniform(*GAMMA_RANGE)),
        seed=int(rng_seed),
    )


def neutral_style(seed: int = 0) -> StyleParams:
    """Identity params: flat sections, no warp, no decay change."""
    return StyleParams(
        iir_order=6,
        q_factors=(0.8, 0.8, 0.8),
        center_freqs_hz=(1000.0, 2000.0, 4000.0),
        gains_db=(0.0, 0.0, 0.0),
        mel_shift=0.0,
        gamma=1.0,
        seed=seed,
    )


def random_iir(params: StyleParams, sample_rate: int = 16000) -> np.ndarray:
    """Cascaded peaking-EQ second-order sections for the given params.

    Every section has unity DC gain and poles strictly inside the unit
    circle by construction. Returns an sos array of shape (n_sections, 6).
    """
    sos = np.zeros((params.n_sections, 6))
    for i, (f0, q, gain_db) in enumerate(zip(params.center_freqs_hz,
                                             params.q_factors,
                                             params.gains_db)):
        # Styles carry absolute frequencies; clamp inside Nyquist when the
        # target rate cannot represent the sampled center.
        f0 = min(f0, 0.49 * sample_rate)
        a_gain = 10.0 ** (gain_db / 40.0)
        w0 = 2.0 * np.pi * f0 / sample_rate
        alpha = np.sin(w0) / (2.0 * q)
        b = np.array([1.0 + alpha * a_gain, -2.0 * np.cos(w0), 1.0 - alpha * a_gain])
        a = np.array([1.0 + alpha / a_gain, -2.0 * np.cos(w0), 1.0 - alpha / a_gain])
        sos[i, :3] = b / a[0]
        sos[i, 3:] = a / a[0]
    return sos


def sos_pole_magnitudes(sos: np.ndarray) -> np.ndarray:
    """Magnitudes of all poles of a second-order-section cascade."""
    mags = []
    for section in np.atleast_2d(sos):
        poles = np.roots(section[3:])
        mags.extend(np.abs(poles).tolist())
    return np.asarray(mags)


def iir_impulse_response(sos: np.ndarray, length: int) -> np.ndarray:
    impulse = np.zeros(length)
    impulse[0] = 1.0
    return sps.sosfilt(sos, impulse)


def _ir_length(sos: np.ndarray, max_length: int = 4096) -> int:
    """Length after which the IR tail is negligible (poles bound the decay)."""
    mags = sos_pole_magnitudes(sos)
    r = float(np.max(mags)) if len(mags) else 0.0
    if r <= 0.0:
        return 8
    n = int(np.ceil(np.log(1e-9) / np.log(max(r, 1e-6))))
    return int(np.clip(n, 8, max_length))


def _warp_source_bins(n_bins: int, n_samples: int, sample_rate: int,
                      shift: float) -> np.ndarray:
    """Fractional source bin for each output rfft bin of the mel warp.

    The warp scales mel frequency by exp(shift), so shifts of +s and -s are
    exact inverse maps; exp(s) tracks (1 + s) to within 0.8% over the
    admissible range. Output bins whose source would sit past Nyquist get a
    negative marker (their content is zeroed).
    """
    freqs = np.arange(n_bins) * sample_rate / n_samples
    src = mel_to_hz(hz_to_mel(freqs) / np.exp(shift)) * n_samples / sample_rate
    # float round-trip through the mel scale can drift by ~1e-9; snap edges
    src = np.where((src > n_bins - 1) & (src < n_bins - 1 + 1e-6),
                   n_bins - 1, src)
    src = np.where((src < 0) & (src > -1e-6), 0.0, src)
    return np.where((src >= 0) & (src <= n_bins - 1), src, -1.0)


def _mel_warp_torch(x: torch.Tensor, src_bins: torch.Tensor) -> torch.Tensor:
    """Warp content along the mel axis on the whole-signal spectrum, (B, N).

    The spectrum is demodulated by the linear phase of each signal's energy
    centroid before interpolation (neighbouring bins of displaced content
    are otherwise anti-phased and cancel), then re-modulated so content
    keeps its temporal position.
    """
    batch, n = x.shape
    spec = torch.fft.rfft(x)
    n_bins = spec.shape[-1]
    k = torch.arange(n_bins, dtype=x.dtype, device=x.device)
    energy = (x ** 2).detach()
    positions = torch.arange(n, dtype=x.dtype, device=x.device)
    t_c = (energy * positions).sum(-1) / energy.sum(-1).clamp(min=1e-30)
    ramp = 2.0 * torch.pi * k.unsqueeze(0) * t_c.unsqueeze(-1) / n
    demod = torch.polar(torch.ones_like(ramp), ramp)
    y = spec * demod

    valid = src_bins >= 0
    src = torch.where(valid, src_bins, torch.zeros_like(src_bins))
    lo = src.floor().long().clamp(0, n_bins - 1)
    hi = (lo + 1).clamp(0, n_bins - 1)
    frac = (src - lo.to(src.dtype)).to(y.real.dtype)
    lo = lo.expand(batch, -1)
    hi = hi.expand(batch, -1)
    frac = frac.expand(batch, -1)
    interp = (y.gather(1, lo) * (1.0 - frac) + y.gather(1, hi) * frac)
    interp = interp * valid.expand(batch, -1)
    out = interp * demod.conj()
    return torch.fft.irfft(out, n=n)


def mel_warp(waveform: Waveform, shift: float) -> Waveform:
    """Shift spectral content by ``shift`` fraction along the mel axis."""
    if not MEL_SHIFT_RANGE[0] <= shift <= MEL_SHIFT_RANGE[1]:
        raise ValueError(f"mel shift {shift} outside {MEL_SHIFT_RANGE}")
    x = torch.as_tensor(np.asarray(waveform.samples, dtype=np.float64))
    n_bins = len(x) // 2 + 1
    src = torch.as_tensor(_warp_source_bins(n_bins, len(x),
                                            waveform.sample_rate, shift))
    out = _mel_warp_torch(x.unsqueeze(0), src.unsqueeze(0))[0]
    return Waveform(out.numpy(), waveform.sample_rate)


def _decay_envelope(n: int, gamma: float, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / (sample_rate * DECAY_REF_S)
    return np.exp((gamma - 1.0) * t)


def decay_perturb(waveform: Waveform, gamma: float) -> Waveform:
    """Multiply by exp((gamma - 1) * n / (sr * 50 ms)); gamma=1 is identity."""
    if not GAMMA_RANGE[0] <= gamma <= GAMMA_RANGE[1]:
        raise ValueError(f"gamma {gamma} outside {GAMMA_RANGE}")
    env = _decay_envelope(len(waveform), gamma, waveform.sample_rate)
    return Waveform(waveform.samples * env, waveform.sample_rate)


def apply_style(waveform: Waveform, params: StyleParams) -> Waveform:
    """Coloration -> mel warp -> decay perturbation; length preserved."""
    sr = waveform.sample_rate
    x = np.asarray(waveform.samples, dtype=np.float64)
    sos = random_iir(params, sr)
    ir = iir_impulse_response(sos, min(_ir_length(sos), max(len(x), 8)))
    colored = sps.fftconvolve(x, ir)[:len(x)]
    warped = mel_warp(Waveform(colored, sr), params.mel_shift)
    return decay_perturb(warped, params.gamma)


def apply_style_batch(x: torch.Tensor, styles: list[StyleParams],
                      sample_rate: int) -> torch.Tensor:
    """Differentiable batched style application, (B, N) -> (B, N).

    The coloration filter is applied as an FFT convolution with its (finite,
    decaying) impulse response, so gradients flow through to the inputs.
    """
    if x.shape[0] != len(styles):
        raise ValueError("one style per batch element required")
    batch, length = x.shape
    n_fft_conv = int(2 ** np.ceil(np.log2(length * 2)))
    irs = np.zeros((batch, length), dtype=np.float64)
    for i, params in enumerate(styles):
        sos = random_iir(params, sample_rate)
        n = min(_ir_length(sos), length)
        irs[i, :n] = iir_impulse_response(sos, n)
    h = torch.as_tensor(irs, dtype=x.dtype, device=x.device)
    spec_x = torch.fft.rfft(x, n=n_fft_conv)
    spec_h = torch.fft.rfft(h, n=n_fft_conv)
    colored = torch.fft.irfft(spec_x * spec_h, n=n_fft_conv)[:, :length]

    n_bins = length // 2 + 1
    src = np.stack([_warp_source_bins(n_bins, length, sample_rate, p.mel_shift)
                    for p in styles])
    warped = _mel_warp_torch(colored, torch.as_tensor(src, device=x.device))

    envs = np.stack([_decay_envelope(length, p.gamma, sample_rate)
                     for p in styles])
    env = torch.as_tensor(envs, dtype=x.dtype, device=x.device)
    return warped * env
