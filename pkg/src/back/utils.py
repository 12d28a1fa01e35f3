"""Utility functions for the ECG classification pipeline."""

import json
import os
import tempfile
from enum import IntEnum
from typing import Iterable, Iterator, List, Mapping, Tuple

import numpy as np

from .constants import LOCK_FILE
from .errors import InputError, OutDirLockedError
from .logging_config import logger


class Stream(IntEnum):
    """Kind tag leading the key of every derived random stream."""

    SPLIT = 1
    SHUFFLE = 2
    DROPOUT = 3
    MODEL_INIT = 4
    SYNTH = 5
    THRESHOLD_SPLIT = 6


_KEY_LIMIT = 1 << 32


def derive_rng(seed: int, stream: Stream, first: int = 0, second: int = 0) -> np.random.Generator:
    """Return the generator for one stochastic step of a seeded run.

    The master seed is the entropy and ``(stream, first, second)`` the spawn
    key, always three 32-bit words, so two different steps never share a
    stream: shuffle uses (SHUFFLE, epoch), dropout (DROPOUT, epoch, batch),
    synthesis (SYNTH, exam index).
    """
    keys = (int(stream), int(first), int(second))
    if not all(0 <= key < _KEY_LIMIT for key in keys):
        raise InputError(f"stream keys must be 32-bit unsigned integers, got {keys}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=keys))


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write payload to path via a temp file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_jsonl(path: str, records: Iterable[Mapping]) -> int:
    """Write one JSON object per line (atomically); returns the record count."""
    lines = [json.dumps(record, sort_keys=True) for record in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def iter_jsonl(path: str) -> Iterator[Tuple[int, object]]:
    """Yield (line_number, parsed object or the exception) for each non-blank line.

    Parse failures are yielded rather than raised so callers can count and skip
    malformed lines.
    """
    with open(path) as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_number, json.loads(line)
            except json.JSONDecodeError as e:
                yield line_number, e


def read_jsonl(path: str) -> List[dict]:
    """Read a JSONL file, raising on the first malformed line."""
    records = []
    for line_number, item in iter_jsonl(path):
        if isinstance(item, Exception):
            raise ValueError(f"{path}:{line_number}: {item}")
        records.append(item)
    return records


class OutDirLock:
    """Exclusive ownership of an output directory through a lock file."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.lock_path = os.path.join(out_dir, LOCK_FILE)
        self._fd = None

    def __enter__(self):
        os.makedirs(self.out_dir, exist_ok=True)
        try:
            self._fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            raise OutDirLockedError(
                f"{self.out_dir} is in use by another run (remove {self.lock_path} if that run died)"
            ) from e
        os.write(self._fd, str(os.getpid()).encode("ascii"))
        logger.debug(f"Acquired {self.lock_path}")
        return self

    def __exit__(self, exc_type, exc, tb):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        if os.path.exists(self.lock_path):
            os.remove(self.lock_path)
        return False
