"""Small shared helpers: atomic file writes, hashing, worker-count policy."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

from .errors import ValidationError

THREADS_ENV_VAR = "KITTEN_THREADS"


def atomic_write_text(path, text: str) -> None:
    """Write text to `path` atomically (temp file + rename in the same directory)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def worker_count() -> int:
    """Worker-parallelism cap from the KITTEN_THREADS env var (0/unset = auto)."""
    raw = os.environ.get(THREADS_ENV_VAR, "0").strip()
    try:
        cap = int(raw) if raw else 0
    except ValueError as exc:
        raise ValidationError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from exc
    if cap < 0:
        raise ValidationError(f"{THREADS_ENV_VAR} must be >= 0, got {cap}")
    if cap == 0:
        return min(os.cpu_count() or 1, 8)
    return cap
