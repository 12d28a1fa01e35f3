"""Exam records, the ECG1 signal container and manifest I/O."""

import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import decimate
from tqdm import tqdm

from .constants import (
    CLASS_NAMES,
    MANIFEST_FILE,
    MAX_DECIMATION,
    N_CLASSES,
    SIGNAL_MAGIC,
    SIGNAL_SUFFIX,
    SIGNAL_VERSION,
    SIGNALS_DIR,
)
from .errors import ConfigError, InputError, ShapeError, TruncatedFileError, FileFormatError
from .logging_config import logger
from .utils import atomic_write_bytes, iter_jsonl, write_jsonl

_SIGNAL_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class DataConfig:
    """How stored exams are turned into network inputs."""

    decimation: int = 1

    def validate(self) -> "DataConfig":
        if not 1 <= self.decimation <= MAX_DECIMATION:
            raise ConfigError(f"decimation must lie in [1, {MAX_DECIMATION}], got {self.decimation}")
        return self


@dataclass
class ExamRecord:
    """One manifest line. Measures are None when unknown; SDNN is in milliseconds."""

    id: str
    path: str
    labels: Tuple[bool, ...]
    heart_rate: Optional[float] = None
    qrs_ms: Optional[float] = None
    pr_ms: Optional[float] = None
    sdnn: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "labels": [bool(v) for v in self.labels],
            "heart_rate": self.heart_rate,
            "qrs_ms": self.qrs_ms,
            "pr_ms": self.pr_ms,
            "sdnn": self.sdnn,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExamRecord":
        try:
            labels = tuple(data["labels"])
            if len(labels) != N_CLASSES or not all(isinstance(v, bool) for v in labels):
                raise InputError(f"labels must be {N_CLASSES} booleans in order {CLASS_NAMES}")
            return cls(
                id=str(data["id"]),
                path=str(data["path"]),
                labels=labels,
                heart_rate=_optional_float(data.get("heart_rate")),
                qrs_ms=_optional_float(data.get("qrs_ms")),
                pr_ms=_optional_float(data.get("pr_ms")),
                sdnn=_optional_float(data.get("sdnn")),
            )
        except KeyError as e:
            raise InputError(f"manifest record is missing field {e}") from e


def _optional_float(value):
    return None if value is None else float(value)


# -- ECG1 container ---------------------------------------------------------


def encode_signal(signal: np.ndarray, sample_rate: int) -> bytes:
    signal = np.asarray(signal)
    if signal.ndim != 2:
        raise ShapeError(f"signal must be [leads, samples], got shape {signal.shape}")
    leads, samples = signal.shape
    header = _SIGNAL_HEADER.pack(SIGNAL_MAGIC, SIGNAL_VERSION, leads, samples, int(sample_rate))
    return header + np.ascontiguousarray(signal, dtype="<f4").tobytes()


def write_signal(path: str, signal: np.ndarray, sample_rate: int) -> None:
    atomic_write_bytes(path, encode_signal(signal, sample_rate))


def read_signal(path: str) -> Tuple[np.ndarray, int]:
    """Return (signal [leads, samples] float32, sample_rate_hz)."""
    with open(path, "rb") as f:
        payload = f.read()
    if len(payload) < _SIGNAL_HEADER.size:
        raise TruncatedFileError(f"{path}: file ends inside the header")
    magic, version, leads, samples, sample_rate = _SIGNAL_HEADER.unpack_from(payload)
    if magic != SIGNAL_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}, expected {SIGNAL_MAGIC!r}")
    if version != SIGNAL_VERSION:
        raise FileFormatError(f"{path}: unsupported signal format version {version}")
    expected = _SIGNAL_HEADER.size + 4 * leads * samples
    if len(payload) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4", count=leads * samples, offset=_SIGNAL_HEADER.size)
    return data.reshape(leads, samples).astype(np.float32), sample_rate


# -- manifest ---------------------------------------------------------------


def write_manifest(path: str, records: Iterable[ExamRecord]) -> int:
    return write_jsonl(path, (record.to_dict() for record in records))


def read_manifest(path: str) -> List[ExamRecord]:
    records = []
    for line_number, item in iter_jsonl(path):
        if isinstance(item, Exception):
            raise InputError(f"{path}:{line_number}: {item}")
        try:
            records.append(ExamRecord.from_dict(item))
        except InputError as e:
            raise InputError(f"{path}:{line_number}: {e}") from e
    return records


def signal_path(exam_id: str) -> str:
    """Manifest-relative location of an exam's signal file."""
    return os.path.join(SIGNALS_DIR, f"{exam_id}{SIGNAL_SUFFIX}")


def write_dataset(out_dir: str, exams, sample_rate: int) -> List[ExamRecord]:
    """Write synthetic exams as ECG1 files plus a manifest; returns the records."""
    records = []
    for exam in tqdm(exams, desc="Writing exams", unit="exam"):
        relative = signal_path(exam.id)
        write_signal(os.path.join(out_dir, relative), exam.signal, sample_rate)
        measures = exam.measures
        records.append(ExamRecord(
            id=exam.id,
            path=relative,
            labels=tuple(bool(v) for v in exam.labels),
            heart_rate=measures.heart_rate,
            qrs_ms=measures.qrs_ms,
            pr_ms=measures.pr_ms,
            sdnn=measures.sdnn,
        ))
    count = write_manifest(os.path.join(out_dir, MANIFEST_FILE), records)
    logger.info(f"Wrote {count} exams to {out_dir}")
    return records


# -- network inputs ---------------------------------------------------------


def fit_length(signal: np.ndarray, samples: int) -> np.ndarray:
    """Zero-pad symmetrically or center-crop the last axis to ``samples``."""
    length = signal.shape[-1]
    if length == samples:
        return signal
    if length > samples:
        start = (length - samples) // 2
        return signal[..., start:start + samples]
    pad = samples - length
    widths = [(0, 0)] * (signal.ndim - 1) + [(pad // 2, pad - pad // 2)]
    return np.pad(signal, widths)


def prepare_signal(signal: np.ndarray, input_samples: int, decimation: int = 1) -> np.ndarray:
    if decimation > 1:
        signal = decimate(signal, decimation, axis=-1, zero_phase=True)
    return np.ascontiguousarray(fit_length(signal, input_samples), dtype=np.float32)


@dataclass
class ExamDataset:
    """In-memory inputs [N, leads, samples] with their labels [N, n_classes]."""

    ids: List[str]
    signals: np.ndarray
    labels: np.ndarray
    records: List[ExamRecord] = field(default_factory=list)

    def __post_init__(self):
        if len(self.ids) != self.signals.shape[0] or self.labels.shape[0] != self.signals.shape[0]:
            raise ShapeError(
                f"dataset has {len(self.ids)} ids, {self.signals.shape[0]} signals, {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices: Sequence[int]) -> "ExamDataset":
        indices = np.asarray(indices, dtype=np.int64)
        records = [self.records[i] for i in indices] if self.records else []
        return ExamDataset([self.ids[i] for i in indices], self.signals[indices], self.labels[indices], records)

    @classmethod
    def from_exams(cls, exams, input_samples: int, decimation: int = 1) -> "ExamDataset":
        """Build from in-memory synthetic exams."""
        if not exams:
            raise InputError("cannot build a dataset from zero exams")
        signals = np.stack([prepare_signal(exam.signal, input_samples, decimation) for exam in exams])
        labels = np.array([exam.labels for exam in exams], dtype=np.float32)
        return cls([exam.id for exam in exams], signals, labels)


def load_dataset(directory: str, input_samples: int, decimation: int = 1) -> ExamDataset:
    """Read a manifest and every signal it lists."""
    manifest = os.path.join(directory, MANIFEST_FILE)
    if not os.path.exists(manifest):
        raise InputError(f"no {MANIFEST_FILE} in {directory}")
    records = read_manifest(manifest)
    if not records:
        raise InputError(f"{manifest} lists no exams")
    signals = []
    for record in tqdm(records, desc="Loading exams", unit="exam"):
        signal, _ = read_signal(os.path.join(directory, record.path))
        signals.append(prepare_signal(signal, input_samples, decimation))
    labels = np.array([record.labels for record in records], dtype=np.float32)
    logger.info(f"Loaded {len(records)} exams from {directory}")
    return ExamDataset([r.id for r in records], np.stack(signals), labels, records)
