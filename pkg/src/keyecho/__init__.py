"""Keystroke-acoustics inference toolkit.

Pipeline: slice keystroke windows from session audio, normalize device
coloration, randomize acoustic style during training, embed with a temporal
encoder trained under adversarial and contrastive objectives, classify keys,
and reconstruct sequences with language-model-guided beam search.
"""

__version__ = "0.1.0"

from .audio import (ClockModel, KeystrokeEvent, KeystrokeSegment, Waveform,
                    apply_clock_model, estimate_alignment, slice_keystrokes)
from .errors import (AlignmentError, CheckpointError, ConfigError, DataError,
                     DecodeError, KeyechoError, SchemaError,
                     TrainingDivergedError)
from .features import LogMelSpectrogram, log_mel, mel_filterbank
from .sessions import SessionRecord, ingest_session, serialize_session

__all__ = [
    "AlignmentError", "CheckpointError", "ClockModel", "ConfigError",
    "DataError", "DecodeError", "KeyechoError", "KeystrokeEvent",
    "KeystrokeSegment", "LogMelSpectrogram", "SchemaError", "SessionRecord",
    "TrainingDivergedError", "Waveform", "apply_clock_model",
    "estimate_alignment", "ingest_session", "log_mel", "mel_filterbank",
    "serialize_session", "slice_keystrokes", "__version__",
]
