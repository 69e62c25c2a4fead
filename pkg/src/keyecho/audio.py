"""Audio containers, keystroke slicing, and multi-device clock alignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .errors import AlignmentError, DataError

log = logging.getLogger(__name__)

# Segments whose 16-bit mono PCM payload falls below this are discarded as
# empty or noise-only captures.
MIN_SEGMENT_PAYLOAD_BYTES = 1200
PCM16_BYTES_PER_SAMPLE = 2

# Correlation peaks below this normalized score mean the recordings do not
# plausibly contain the same material.
MIN_ALIGNMENT_SCORE = 0.2

# Clock drift above 1% is physically implausible for commodity recorders.
MAX_ABS_DRIFT = 0.01


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples (nominal [-1, 1]) at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.issubdtype(samples.dtype, np.floating):
            samples = samples.astype(np.float64)
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class KeystrokeEvent:
    """A single key press at t_ms milliseconds from session start."""

    key: str
    t_ms: float

    def __post_init__(self):
        if self.t_ms < 0:
            raise ValueError(f"event time must be >= 0, got {self.t_ms}")
        if not self.key:
            raise ValueError("event key must be a non-empty label")


@dataclass
class KeystrokeSegment:
    """One sliced keystroke window with its key and keyboard-domain labels."""

    audio: Waveform
    key: str
    domain_id: int
    source_event_ms: float
    pre_ms: float
    post_ms: float
    truncated: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.domain_id < 1:
            raise ValueError(f"domain_id must be >= 1, got {self.domain_id}")


@dataclass(frozen=True)
class ClockModel:
    """Affine clock map between recorders: t -> t + offset_s + drift * t."""

    offset_s: float
    drift: float

    def __post_init__(self):
        if abs(self.drift) >= MAX_ABS_DRIFT:
            raise ValueError(
                f"drift {self.drift} exceeds sanity bound {MAX_ABS_DRIFT}")


def slice_keystrokes(
    waveform: Waveform,
    events: list[KeystrokeEvent],
    pre_ms: float = 60.0,
    post_ms: float = 200.0,
    domain_id: int = 1,
    min_payload_bytes: int = MIN_SEGMENT_PAYLOAD_BYTES,
) -> list[KeystrokeSegment]:
    """Slice a fixed window around each keystroke timestamp.

    Each event at t_ms yields the half-open sample range
    [(t_ms - pre_ms) * sr / 1000, (t_ms + post_ms) * sr / 1000). Windows
    clipped at the audio boundaries are zero-padded back to full length and
    flagged ``truncated``. Overlap between adjacent windows from rapid typing
    is retained. Events past the end of the audio are dropped with a warning,
    as are windows whose 16-bit PCM payload would fall under
    ``min_payload_bytes``.
    """
    if pre_ms < 0 or post_ms < 0:
        raise ValueError("pre_ms and post_ms must be >= 0")
    if any(events[i].t_ms > events[i + 1].t_ms for i in range(len(events) - 1)):
        raise ValueError("events must be sorted by t_ms")

    sr = waveform.sample_rate
    n = len(waveform)
    seg_len = int(round((pre_ms + post_ms) * sr / 1000.0))
    segments: list[KeystrokeSegment] = []
    for event in events:
        if seg_len * PCM16_BYTES_PER_SAMPLE < min_payload_bytes:
            log.warning("segment for key %r at %.1f ms below %d-byte payload "
                        "threshold; dropped", event.key, event.t_ms,
                        min_payload_bytes)
            continue
        if event.t_ms * sr / 1000.0 >= n:
            log.warning("event %r at %.1f ms is beyond audio end (%.1f ms); "
                        "dropped", event.key, event.t_ms, 1000.0 * n / sr)
            continue
        start = int(round((event.t_ms - pre_ms) * sr / 1000.0))
        end = start + seg_len
        lo, hi = max(start, 0), min(end, n)
        window = np.zeros(seg_len, dtype=waveform.samples.dtype)
        window[lo - start:hi - start] = waveform.samples[lo:hi]
        segments.append(KeystrokeSegment(
            audio=Waveform(window, sr),
            key=event.key,
            domain_id=domain_id,
            source_event_ms=event.t_ms,
            pre_ms=pre_ms,
            post_ms=post_ms,
            truncated=(lo != start or hi != end),
        ))
    return segments


def _xcorr_lag(probe: np.ndarray, reference: np.ndarray) -> tuple[int, float, np.ndarray, np.ndarray]:
    """Best integer lag k maximizing sum_t reference(t) * probe(t + k).

    Returns (lag, normalized peak score, correlation, lags).
    """
    corr = sps.correlate(probe, reference, mode="full", method="fft")
    lags = sps.correlation_lags(len(probe), len(reference), mode="full")
    idx = int(np.argmax(corr))
    norm = float(np.linalg.norm(probe) * np.linalg.norm(reference))
    score = float(corr[idx]) / norm if norm > 0 else 0.0
    return int(lags[idx]), score, corr, lags


def _parabolic_refine(corr: np.ndarray, idx: int) -> float:
    """Sub-sample peak refinement via 3-point parabola; 0 at the edges."""
    if idx <= 0 or idx >= len(corr) - 1:
        return 0.0
    c0, c1, c2 = corr[idx - 1], corr[idx], corr[idx + 1]
    denom = c0 - 2.0 * c1 + c2
    if denom == 0:
        return 0.0
    return float(0.5 * (c0 - c2) / denom)


def estimate_alignment(
    reference: Waveform,
    secondary: Waveform,
    segment_spacing_s: float,
) -> ClockModel:
    """Estimate offset and linear clock drift of ``secondary`` vs ``reference``.

    The offset is the argmax of the normalized cross-correlation, in seconds.
    Drift is estimated from two correlation windows (the first and last
    quarter of the secondary recording): the slope of the local offsets over
    their time separation.
    """
    if reference.sample_rate != secondary.sample_rate:
        raise DataError("reference and secondary must share a sample rate")
    sr = reference.sample_rate
    min_len = int(2 * segment_spacing_s * sr)
    if len(reference) < min_len or len(secondary) < min_len:
        raise DataError(
            f"waveforms must be at least 2 * segment_spacing_s = "
            f"{2 * segment_spacing_s:.3f} s long")

    ref = np.asarray(reference.samples, dtype=np.float64)
    sec = np.asarray(secondary.samples, dtype=np.float64)

    offset_lag, score, _, _ = _xcorr_lag(sec, ref)
    if score < MIN_ALIGNMENT_SCORE:
        raise AlignmentError(
            f"correlation peak {score:.3f} below {MIN_ALIGNMENT_SCORE}; "
            "recordings do not appear related")

    # Two windows: first and last quarter of the secondary.
    w = len(sec) // 4
    early = sec[:w]
    late_start = len(sec) - w
    late = sec[late_start:]

    def _window_offset(window: np.ndarray, start: int) -> float:
        lag, _, corr, lags = _xcorr_lag(window, ref)
        idx = int(np.argmax(corr))
        return start + lag + _parabolic_refine(corr, idx)

    off_early = _window_offset(early, 0)
    off_late = _window_offset(late, late_start)
    separation = late_start  # distance between window starts, in samples
    drift = (off_late - off_early) / separation if separation > 0 else 0.0

    return ClockModel(offset_s=offset_lag / sr, drift=drift)


def apply_clock_model(t_s: float, model: ClockModel) -> float:
    """Map a reference-clock time to the secondary device's clock."""
    return t_s + model.offset_s + model.drift * t_s


def read_wav(path) -> Waveform:
    """Read a mono PCM WAV file (16-bit int or float32)."""
    sr, data = wavfile.read(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max)
        data = data.astype(np.float64) / scale
    else:
        data = data.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: WAV contains non-finite samples")
    return Waveform(data, int(sr))


def write_wav(path, waveform: Waveform, dtype: str = "float32") -> None:
    """Write a mono WAV file as float32 or 16-bit PCM."""
    if dtype == "float32":
        wavfile.write(path, waveform.sample_rate,
                      waveform.samples.astype(np.float32))
    elif dtype == "int16":
        clipped = np.clip(waveform.samples, -1.0, 1.0)
        wavfile.write(path, waveform.sample_rate,
                      (clipped * 32767.0).astype(np.int16))
    else:
        raise ValueError(f"unsupported WAV dtype {dtype!r}")
