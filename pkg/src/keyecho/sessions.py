"""Session metadata: parsing, validation, canonical serialization, manifests.

The on-disk document is JSON with the following shape::

    {
      "participant": {"id": "U001", "gender": "Female", "handedness": "Right"},
      "pre_ms": 60, "post_ms": 200,
      "sample_rate": 48000,
      "keys": [{"key": "a", "t_ms": 123.4}, ...],
      "exported_files": [{...}],
      "env": {"location": "cafe", "noise_level": "high"}
    }

Unknown top-level fields are preserved verbatim so capture-tool exports
round-trip unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .audio import KeystrokeEvent
from .errors import SchemaError

REQUIRED_FIELDS = ("participant", "pre_ms", "post_ms", "sample_rate", "keys")
_CANONICAL_ORDER = ("participant", "pre_ms", "post_ms", "sample_rate", "keys",
                    "exported_files", "env")


@dataclass
class SessionRecord:
    """One validated recording session."""

    participant: dict
    sample_rate: int
    pre_ms: float
    post_ms: float
    events: list[KeystrokeEvent]
    env: dict = field(default_factory=dict)
    exported_files: list = field(default_factory=list)
    audio_path: str | None = None
    extras: dict = field(default_factory=dict)
    # Original document bytes, kept so exports are byte-identical.
    source_bytes: bytes | None = None

    @property
    def session_id(self) -> str:
        pid = self.participant.get("id", "unknown")
        session_no = self.extras.get("session", "")
        return f"{pid}_{session_no}" if session_no != "" else str(pid)


def ingest_session(metadata_document: bytes | str,
                   audio_path: str | None = None,
                   vocabulary: set[str] | None = None) -> SessionRecord:
    """Parse and validate a session metadata document.

    Raises SchemaError naming the offending field for missing required
    fields, malformed key entries, out-of-order timestamps, or keys outside
    the given vocabulary.
    """
    raw = metadata_document.encode("utf-8") if isinstance(metadata_document, str) \
        else bytes(metadata_document)
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"metadata document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("metadata document must be a JSON object")

    for name in REQUIRED_FIELDS:
        if name not in doc:
            raise SchemaError(f"missing required field: {name}")

    participant = doc["participant"]
    if not isinstance(participant, dict) or "id" not in participant:
        raise SchemaError("field participant must be an object with an id")

    sample_rate = doc["sample_rate"]
    if not isinstance(sample_rate, (int, float)) or sample_rate <= 0:
        raise SchemaError("field sample_rate must be a positive number")
    pre_ms, post_ms = doc["pre_ms"], doc["post_ms"]
    if not isinstance(pre_ms, (int, float)) or pre_ms < 0:
        raise SchemaError("field pre_ms must be a non-negative number")
    if not isinstance(post_ms, (int, float)) or post_ms < 0:
        raise SchemaError("field post_ms must be a non-negative number")

    keys = doc["keys"]
    if not isinstance(keys, list):
        raise SchemaError("field keys must be an array")
    events: list[KeystrokeEvent] = []
    last_t = -1.0
    for i, entry in enumerate(keys):
        if not isinstance(entry, dict) or "key" not in entry or "t_ms" not in entry:
            raise SchemaError(f"field keys[{i}] must be an object with key and t_ms")
        key, t_ms = entry["key"], entry["t_ms"]
        if not isinstance(t_ms, (int, float)) or t_ms < 0:
            raise SchemaError(f"field keys[{i}].t_ms must be a non-negative number")
        if t_ms < last_t:
            raise SchemaError(
                f"field keys[{i}].t_ms is out of order ({t_ms} < {last_t})")
        if vocabulary is not None and key not in vocabulary:
            raise SchemaError(f"field keys[{i}].key {key!r} not in vocabulary")
        last_t = float(t_ms)
        events.append(KeystrokeEvent(key=str(key), t_ms=float(t_ms)))

    known = set(_CANONICAL_ORDER)
    extras = {k: v for k, v in doc.items() if k not in known}
    return SessionRecord(
        participant=participant,
        sample_rate=int(sample_rate),
        pre_ms=float(pre_ms),
        post_ms=float(post_ms),
        events=events,
        env=doc.get("env", {}),
        exported_files=doc.get("exported_files", []),
        audio_path=audio_path,
        extras=extras,
        source_bytes=raw,
    )


def _number(value: float):
    # Keep integral values as ints so re-serialization matches the original.
    return int(value) if float(value).is_integer() else value


def serialize_session(record: SessionRecord, prefer_source: bool = True) -> bytes:
    """Serialize a session to canonical JSON (UTF-8, 2-space indent).

    When the record was ingested from a document and ``prefer_source`` is
    set, the original bytes are returned verbatim.
    """
    if prefer_source and record.source_bytes is not None:
        return record.source_bytes
    doc = {
        "participant": record.participant,
        "pre_ms": _number(record.pre_ms),
        "post_ms": _number(record.post_ms),
        "sample_rate": record.sample_rate,
        "keys": [{"key": e.key, "t_ms": e.t_ms} for e in record.events],
        "exported_files": record.exported_files,
        "env": record.env,
    }
    doc.update(record.extras)
    return json.dumps(doc, indent=2, ensure_ascii=False).encode("utf-8")


def ingest_paths(paths: list[str | Path],
                 vocabulary: set[str] | None = None) -> list[dict]:
    """Validate session documents and return manifest rows.

    Each row lists the file, session id, sample rate, and event count.
    Raises SchemaError (naming the file) on the first invalid document.
    """
    rows = []
    for path in paths:
        path = Path(path)
        try:
            record = ingest_session(path.read_bytes(), vocabulary=vocabulary)
        except SchemaError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        rows.append({
            "file": str(path),
            "session_id": record.session_id,
            "sample_rate": record.sample_rate,
            "pre_ms": record.pre_ms,
            "post_ms": record.post_ms,
            "events": len(record.events),
        })
    return rows
